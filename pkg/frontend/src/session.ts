// Console sessions: a seeker or expert seat bound to one user, speaking to
// the service only through the webhook and the read endpoints.

import { ServiceClient } from "./api.js";
import type { UserView, WebhookOutcome } from "./types.js";
import {
  Banner,
  ExpertPane,
  SeekerPane,
  bannerForOutcome,
  buildExpertPane,
  buildSeekerPane,
} from "./viewmodel.js";

function envelopeBase(address: string): Record<string, unknown> {
  return {
    sender: address,
    message_id: `console-${Date.now()}-${Math.random().toString(36).slice(2, 10)}`,
    timestamp: new Date().toISOString(),
  };
}

export class SeekerSession {
  constructor(
    private client: ServiceClient,
    public readonly user: UserView,
  ) {}

  async pane(): Promise<SeekerPane> {
    return buildSeekerPane(await this.client.conversation(this.user.user_id));
  }

  async sendText(text: string): Promise<WebhookOutcome> {
    const outcomes = await this.client.webhook({
      ...envelopeBase(this.user.channel_address),
      kind: "text",
      text,
    });
    return outcomes[0];
  }

  async tapSuggestion(index: number, setMessageId: string): Promise<WebhookOutcome> {
    const outcomes = await this.client.webhook({
      ...envelopeBase(this.user.channel_address),
      kind: "suggestion",
      suggestion_index: index,
      context_message_id: setMessageId,
    });
    return outcomes[0];
  }
}

export class ExpertSession {
  constructor(
    private client: ServiceClient,
    public readonly user: UserView,
  ) {}

  async pane(): Promise<ExpertPane> {
    const tasks = await this.client.tasks({ expert_id: this.user.user_id });
    return buildExpertPane(tasks, this.user.user_id);
  }

  /** Press Yes / No / the reroute button on a specific task card. */
  async press(label: string, contextMessageId: string | null): Promise<Banner> {
    const envelope: Record<string, unknown> = {
      ...envelopeBase(this.user.channel_address),
      kind: "button",
      button_label: label,
    };
    if (contextMessageId) envelope.context_message_id = contextMessageId;
    const outcomes = await this.client.webhook(envelope);
    return bannerForOutcome(outcomes[0]);
  }

  /** Free-form correction: the service routes it to the awaiting task. */
  async sendCorrection(text: string): Promise<Banner> {
    const outcomes = await this.client.webhook({
      ...envelopeBase(this.user.channel_address),
      kind: "text",
      text,
    });
    return bannerForOutcome(outcomes[0]);
  }
}

export type StopPolling = () => void;

/** Invoke refresh immediately, then on an interval; returns a stopper. */
export function poll(refresh: () => Promise<void>, intervalMs = 2000): StopPolling {
  let stopped = false;
  const run = () => {
    if (!stopped) void refresh().catch((error) => console.error(error));
  };
  run();
  const handle = setInterval(run, intervalMs);
  return () => {
    stopped = true;
    clearInterval(handle);
  };
}
