// Browser bootstrap: two panes over the same service, refreshed by polling.

import { ServiceClient } from "./api.js";
import { ExpertSession, SeekerSession, poll } from "./session.js";
import type { UserView } from "./types.js";
import { Banner } from "./viewmodel.js";

const params = new URLSearchParams(window.location.search);
const client = new ServiceClient(
  params.get("service") ?? "http://127.0.0.1:8000",
  params.get("token") ?? undefined,
);

const el = (id: string) => document.getElementById(id) as HTMLElement;

let seeker: SeekerSession | null = null;
let expert: ExpertSession | null = null;
let stopSeeker: (() => void) | null = null;
let stopExpert: (() => void) | null = null;

function showBanner(banner: Banner): void {
  const node = el("expert-banner");
  node.textContent = banner.text;
  node.className = `banner ${banner.tone}`;
  node.style.display = "block";
  setTimeout(() => (node.style.display = "none"), 4000);
}

async function refreshSeekerPane(): Promise<void> {
  if (!seeker) return;
  const pane = await seeker.pane();
  const log = el("seeker-log");
  log.innerHTML = "";
  for (const bubble of pane.bubbles) {
    const div = document.createElement("div");
    div.className = `bubble ${bubble.direction}`;
    if (bubble.quoted) {
      const quote = document.createElement("div");
      quote.className = "quote";
      quote.textContent = bubble.quoted;
      div.appendChild(quote);
    }
    const body = document.createElement("div");
    body.textContent = bubble.kind === "suggestions" ? `· ${bubble.text}` : bubble.text;
    div.appendChild(body);
    if (bubble.audio) {
      const audioTag = document.createElement("div");
      audioTag.className = "audio-tag";
      audioTag.textContent = "voice message";
      div.appendChild(audioTag);
    }
    if (bubble.glyph) {
      const glyph = document.createElement("span");
      glyph.className = "glyph";
      glyph.textContent = bubble.glyph;
      div.appendChild(glyph);
    }
    log.appendChild(div);
  }
  const chipRow = el("seeker-chips");
  chipRow.innerHTML = "";
  for (const chip of pane.chips) {
    const button = document.createElement("button");
    button.className = "chip";
    button.textContent = chip.label;
    button.onclick = async () => {
      await seeker!.tapSuggestion(chip.index, chip.setMessageId);
      await refreshSeekerPane();
    };
    chipRow.appendChild(button);
  }
  log.scrollTop = log.scrollHeight;
}

async function refreshExpertPane(): Promise<void> {
  if (!expert) return;
  const pane = await expert.pane();
  const queue = el("expert-queue");
  queue.innerHTML = "";
  for (const card of [...pane.queue, ...pane.done]) {
    const div = document.createElement("div");
    div.className = `card ${card.actionable || card.awaitingMyCorrection ? "open" : "settled"}`;
    div.innerHTML = `
      <div class="card-glyph">${card.glyph}</div>
      <div class="card-question"></div>
      <div class="card-answer"></div>
      <div class="card-meta"></div>`;
    (div.querySelector(".card-question") as HTMLElement).textContent = card.question;
    (div.querySelector(".card-answer") as HTMLElement).textContent = card.answer;
    (div.querySelector(".card-meta") as HTMLElement).textContent =
      `${card.demographics} · sources: ${card.citations.join(", ") || "none"}` +
      (card.waitingNote ? ` · ${card.waitingNote}` : "");
    if (card.actionable) {
      const prompt = document.createElement("div");
      prompt.className = "card-prompt";
      prompt.textContent = "Is the answer accurate and complete?";
      div.appendChild(prompt);
      const row = document.createElement("div");
      row.className = "button-row";
      for (const label of card.buttons) {
        const button = document.createElement("button");
        button.textContent = label;
        button.onclick = async () => {
          showBanner(await expert!.press(label, card.contextMessageId));
          await refreshExpertPane();
          await refreshSeekerPane();
        };
        row.appendChild(button);
      }
      div.appendChild(row);
    }
    if (card.awaitingMyCorrection) {
      const box = document.createElement("div");
      box.className = "correction-box";
      const input = document.createElement("input");
      input.placeholder = "Type your correction in your own words";
      const send = document.createElement("button");
      send.textContent = "Send correction";
      send.onclick = async () => {
        if (!input.value.trim()) return;
        showBanner(await expert!.sendCorrection(input.value));
        await refreshExpertPane();
        await refreshSeekerPane();
      };
      box.append(input, send);
      div.appendChild(box);
    }
    if (card.finalAnswer) {
      const final = document.createElement("div");
      final.className = "final-answer";
      final.textContent = `final: ${card.finalAnswer}`;
      div.appendChild(final);
    }
    queue.appendChild(div);
  }
}

function bindSeeker(user: UserView): void {
  seeker = new SeekerSession(client, user);
  stopSeeker?.();
  stopSeeker = poll(refreshSeekerPane);
}

function bindExpert(user: UserView): void {
  expert = new ExpertSession(client, user);
  stopExpert?.();
  stopExpert = poll(refreshExpertPane);
}

async function init(): Promise<void> {
  const users = await client.users();
  const seekers = users.filter(
    (u) => (u.role === "patient" || u.role === "attendant") && !u.deactivated,
  );
  const experts = users.filter((u) => u.role !== "patient" && u.role !== "attendant");
  const seekerSelect = el("seeker-select") as HTMLSelectElement;
  const expertSelect = el("expert-select") as HTMLSelectElement;
  seekerSelect.innerHTML = seekers
    .map((u) => `<option value="${u.user_id}">${u.role} ${u.channel_address}</option>`)
    .join("");
  expertSelect.innerHTML = experts
    .map((u) => `<option value="${u.user_id}">${u.role} (${u.user_id})</option>`)
    .join("");
  seekerSelect.onchange = () =>
    bindSeeker(seekers.find((u) => u.user_id === seekerSelect.value)!);
  expertSelect.onchange = () =>
    bindExpert(experts.find((u) => u.user_id === expertSelect.value)!);
  if (seekers.length) bindSeeker(seekers[0]);
  if (experts.length) bindExpert(experts[0]);

  (el("seeker-send") as HTMLButtonElement).onclick = async () => {
    const input = el("seeker-input") as HTMLInputElement;
    if (!seeker || !input.value.trim()) return;
    await seeker.sendText(input.value);
    input.value = "";
    await refreshSeekerPane();
  };
}

document.addEventListener("DOMContentLoaded", () => void init());
