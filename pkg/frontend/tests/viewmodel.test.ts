import { describe, expect, it } from "vitest";

import type { MessageView, TaskView } from "../src/types.js";
import {
  bannerForOutcome,
  buildExpertPane,
  buildSeekerPane,
} from "../src/viewmodel.js";

function message(overrides: Partial<MessageView>): MessageView {
  return {
    message_id: "m0",
    direction: "out",
    kind: "text",
    at: "2023-12-01T09:00:00+00:00",
    text: "",
    reaction: null,
    target_message_id: null,
    buttons: [],
    suggestions: [],
    header: null,
    audio: false,
    ...overrides,
  };
}

function task(overrides: Partial<TaskView>): TaskView {
  return {
    task_id: "t1",
    query_id: "q1",
    answer_id: "a1",
    state: "awaiting_operating",
    track: "doctor",
    question: "How many days after surgery can I wash my hair?",
    bot_answer: "Washing your hair and shampooing are allowed 3 days after the surgery.",
    citations: ["postop-guide"],
    is_unknown: false,
    demographics: "64/F/OD",
    operating_expert_id: "doc-op",
    escalation_expert_id: "doc-esc",
    deciding_expert_id: null,
    created_at: "2023-12-01T09:00:00+00:00",
    escalated_at: null,
    buttons: ["Yes", "No", "Send to Patient Coordinator"],
    final_answer: null,
    prompt_message_ids: { "doc-op": "prompt-1" },
    ...overrides,
  };
}

describe("seeker pane", () => {
  it("shows the answer bubble with its current reaction glyph", () => {
    const pane = buildSeekerPane([
      message({ message_id: "q", direction: "in", text: "hair?" }),
      message({ message_id: "ans", text: "Allowed after 3 days.", reaction: "❓" }),
    ]);
    expect(pane.bubbles).toHaveLength(2);
    expect(pane.bubbles[1].glyph).toBe("❓");
    expect(pane.bubbles[0].direction).toBe("in");
  });

  it("keeps only the latest suggestion strip tappable", () => {
    const pane = buildSeekerPane([
      message({ message_id: "s1", kind: "suggestions", suggestions: ["a", "b", "c"], header: "What to do next?" }),
      message({ message_id: "s2", kind: "suggestions", suggestions: ["d", "e", "f"], header: "What to do next?" }),
    ]);
    expect(pane.chips.map((c) => c.label)).toEqual(["d", "e", "f"]);
    expect(pane.chips[0]).toMatchObject({ index: 1, setMessageId: "s2" });
  });

  it("resolves tagged replies to a quote of the target", () => {
    const pane = buildSeekerPane([
      message({ message_id: "ans", text: "Old answer text.", reaction: "❌" }),
      message({
        message_id: "fix",
        kind: "tagged_reply",
        text: "Better to avoid washing your hair for 2 weeks after the cataract surgery.",
        target_message_id: "ans",
        reaction: "✅",
      }),
    ]);
    expect(pane.bubbles[1].quoted).toBe("Old answer text.");
    expect(pane.bubbles[1].glyph).toBe("✅");
  });

  it("marks voice messages", () => {
    const pane = buildSeekerPane([message({ kind: "audio", audio: true })]);
    expect(pane.bubbles[0].audio).toBe(true);
  });
});

describe("expert pane", () => {
  it("renders only tasks where the bound user is assigned", () => {
    const pane = buildExpertPane([task({})], "coord-op");
    expect(pane.queue).toHaveLength(0);
    expect(pane.done).toHaveLength(0);
  });

  it("queues an open task with its three buttons and context id", () => {
    const pane = buildExpertPane([task({})], "doc-op");
    expect(pane.queue).toHaveLength(1);
    const card = pane.queue[0];
    expect(card.actionable).toBe(true);
    expect(card.buttons).toEqual(["Yes", "No", "Send to Patient Coordinator"]);
    expect(card.contextMessageId).toBe("prompt-1");
    expect(card.glyph).toBe("❓");
  });

  it("holds escalation-seat tasks until escalation fires", () => {
    const before = buildExpertPane([task({})], "doc-esc");
    expect(before.queue).toHaveLength(0);
    expect(before.done[0].waitingNote).toBe("with the operating expert");
    const after = buildExpertPane(
      [task({ state: "escalated", escalated_at: "2023-12-01T12:00:00+00:00" })],
      "doc-esc",
    );
    expect(after.queue).toHaveLength(1);
  });

  it("reveals the correction box only to the deciding expert", () => {
    const awaiting = task({
      state: "awaiting_correction",
      deciding_expert_id: "doc-op",
      escalated_at: "2023-12-01T12:00:00+00:00",
    });
    const mine = buildExpertPane([awaiting], "doc-op");
    expect(mine.queue[0].awaitingMyCorrection).toBe(true);
    expect(mine.queue[0].actionable).toBe(false);
    const theirs = buildExpertPane([awaiting], "doc-esc");
    expect(theirs.queue).toHaveLength(0);
    expect(theirs.done[0].waitingNote).toBe("awaiting the other expert's correction");
  });

  it("settles terminal tasks with a green tick", () => {
    const pane = buildExpertPane(
      [task({ state: "corrected_done", final_answer: "Better to avoid." })],
      "doc-op",
    );
    expect(pane.queue).toHaveLength(0);
    expect(pane.done[0].glyph).toBe("✅");
    expect(pane.done[0].finalAnswer).toBe("Better to avoid.");
  });
});

describe("banners", () => {
  it("maps the race loser to the already-verified banner", () => {
    const banner = bannerForOutcome({
      kind: "decision",
      task_id: "t1",
      state: "approved_yes",
      error: "AlreadyDecided",
    });
    expect(banner.tone).toBe("already");
    expect(banner.text).toMatch(/already verified/i);
  });

  it("asks for a correction after a No", () => {
    const banner = bannerForOutcome({
      kind: "decision",
      state: "awaiting_correction",
    });
    expect(banner.tone).toBe("ok");
    expect(banner.text).toMatch(/correction/);
  });

  it("flags rejections", () => {
    const banner = bannerForOutcome({
      kind: "decision_rejected",
      error: "NotAssignedExpert",
    });
    expect(banner.tone).toBe("error");
    expect(banner.text).toContain("NotAssignedExpert");
  });
});
