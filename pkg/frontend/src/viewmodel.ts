// Pure view-model builders. The console holds no business state of its own:
// everything below is a projection of what the service read endpoints return.

import type { MessageView, TaskView, WebhookOutcome } from "./types.js";

export interface Bubble {
  id: string;
  direction: "in" | "out";
  kind: string;
  text: string;
  glyph: string | null;
  quoted: string | null; // first line of the message a tagged reply points at
  audio: boolean;
}

export interface SuggestionChip {
  label: string;
  index: number; // 1-based, as the wire expects
  setMessageId: string;
}

export interface SeekerPane {
  bubbles: Bubble[];
  chips: SuggestionChip[];
}

const QUOTE_LIMIT = 80;

function quoteOf(messages: MessageView[], targetId: string | null): string | null {
  if (!targetId) return null;
  const target = messages.find((m) => m.message_id === targetId);
  if (!target || !target.text) return null;
  const line = target.text.split("\n")[0];
  return line.length > QUOTE_LIMIT ? `${line.slice(0, QUOTE_LIMIT - 1)}…` : line;
}

/** Project a conversation into chat bubbles plus the active suggestion chips. */
export function buildSeekerPane(messages: MessageView[]): SeekerPane {
  const bubbles: Bubble[] = [];
  let chips: SuggestionChip[] = [];
  for (const message of messages) {
    if (message.kind === "suggestions") {
      // only the latest strip stays tappable
      chips = message.suggestions.map((label, position) => ({
        label,
        index: position + 1,
        setMessageId: message.message_id,
      }));
      bubbles.push({
        id: message.message_id,
        direction: message.direction,
        kind: message.kind,
        text: message.header ?? "",
        glyph: null,
        quoted: null,
        audio: false,
      });
      continue;
    }
    bubbles.push({
      id: message.message_id,
      direction: message.direction,
      kind: message.kind,
      text: message.text,
      glyph: message.reaction,
      quoted: quoteOf(messages, message.target_message_id),
      audio: message.audio,
    });
  }
  return { bubbles, chips };
}

export interface TaskCard {
  taskId: string;
  question: string;
  answer: string;
  citations: string[];
  demographics: string;
  state: string;
  glyph: string;
  buttons: string[];
  actionable: boolean;
  awaitingMyCorrection: boolean;
  waitingNote: string | null;
  contextMessageId: string | null;
  finalAnswer: string | null;
}

export interface ExpertPane {
  queue: TaskCard[]; // needs action by the bound expert
  done: TaskCard[]; // settled or locked elsewhere
}

const TERMINAL_STATES = new Set(["approved_yes", "corrected_done", "rerouted"]);

function cardGlyph(task: TaskView): string {
  return TERMINAL_STATES.has(task.state) ? "✅" : "❓";
}

/** Project the task list into the expert's queue; only tasks where the bound
 * user is an assigned expert are ever rendered. */
export function buildExpertPane(tasks: TaskView[], boundUserId: string): ExpertPane {
  const queue: TaskCard[] = [];
  const done: TaskCard[] = [];
  for (const task of tasks) {
    const assigned =
      task.operating_expert_id === boundUserId ||
      task.escalation_expert_id === boundUserId;
    if (!assigned) continue;
    const isEscalationSeat = task.escalation_expert_id === boundUserId;
    const beforeEscalation = isEscalationSeat && !task.escalated_at;
    const terminal = TERMINAL_STATES.has(task.state);
    const awaitingMyCorrection =
      task.state === "awaiting_correction" && task.deciding_expert_id === boundUserId;
    const lockedElsewhere =
      task.state === "awaiting_correction" && task.deciding_expert_id !== boundUserId;
    const actionable = !terminal && !beforeEscalation && task.state !== "awaiting_correction";
    let waitingNote: string | null = null;
    if (beforeEscalation && !terminal) waitingNote = "with the operating expert";
    if (lockedElsewhere) waitingNote = "awaiting the other expert's correction";
    const card: TaskCard = {
      taskId: task.task_id,
      question: task.question,
      answer: task.bot_answer,
      citations: task.citations,
      demographics: task.demographics,
      state: task.state,
      glyph: cardGlyph(task),
      buttons: task.buttons,
      actionable,
      awaitingMyCorrection,
      waitingNote,
      contextMessageId: task.prompt_message_ids[boundUserId] ?? null,
      finalAnswer: task.final_answer,
    };
    if (actionable || awaitingMyCorrection) queue.push(card);
    else done.push(card);
  }
  return { queue, done };
}

export interface Banner {
  tone: "ok" | "already" | "error";
  text: string;
}

/** Map a webhook outcome for an expert action onto the banner to show. */
export function bannerForOutcome(outcome: WebhookOutcome): Banner {
  if (outcome.kind === "decision" && outcome.error === "AlreadyDecided") {
    return { tone: "already", text: "Already verified by the other expert." };
  }
  if (outcome.kind === "decision" && outcome.state === "awaiting_correction") {
    return { tone: "ok", text: "Marked incorrect. Please type your correction." };
  }
  if (outcome.kind === "decision" || outcome.kind === "correction") {
    return { tone: "ok", text: "Recorded." };
  }
  if (outcome.kind === "decision_rejected" || outcome.kind === "correction_rejected") {
    return { tone: "error", text: `Rejected: ${outcome.error ?? "unknown reason"}` };
  }
  if (outcome.kind === "no_actionable_task" || outcome.kind === "no_correction_pending") {
    return { tone: "error", text: "Nothing is waiting for you right now." };
  }
  return { tone: "ok", text: outcome.kind };
}
