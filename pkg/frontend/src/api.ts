import type {
  EventView,
  MessageView,
  OnboardForm,
  TaskView,
  UserView,
  WebhookOutcome,
} from "./types.js";

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    const body = await response.text();
    throw new ServiceError(response.status, body || response.statusText);
  }
  return (await response.json()) as T;
}

/** Thin typed client over the service's HTTP surface. */
export class ServiceClient {
  constructor(
    private baseUrl: string,
    private adminToken?: string,
  ) {}

  private headers(extra?: Record<string, string>): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json", ...extra };
    if (this.adminToken) headers["X-Admin-Token"] = this.adminToken;
    return headers;
  }

  async health(): Promise<{ status: string; events: number }> {
    return asJson(await fetch(`${this.baseUrl}/health`));
  }

  async onboard(form: OnboardForm): Promise<string[]> {
    const body = await asJson<{ user_ids: string[] }>(
      await fetch(`${this.baseUrl}/onboard`, {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(form),
      }),
    );
    return body.user_ids;
  }

  /** Send one channel envelope; the service answers with per-message outcomes. */
  async webhook(envelope: Record<string, unknown>): Promise<WebhookOutcome[]> {
    const body = await asJson<{ ok: boolean; outcomes: WebhookOutcome[] }>(
      await fetch(`${this.baseUrl}/webhook/channel`, {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(envelope),
      }),
    );
    return body.outcomes;
  }

  async conversation(userId: string): Promise<MessageView[]> {
    const body = await asJson<{ messages: MessageView[] }>(
      await fetch(`${this.baseUrl}/conversation/${encodeURIComponent(userId)}`),
    );
    return body.messages;
  }

  async tasks(params: { state?: string; expert_id?: string } = {}): Promise<TaskView[]> {
    const query = new URLSearchParams();
    if (params.state) query.set("state", params.state);
    if (params.expert_id) query.set("expert_id", params.expert_id);
    const suffix = query.toString() ? `?${query.toString()}` : "";
    const body = await asJson<{ tasks: TaskView[] }>(
      await fetch(`${this.baseUrl}/admin/tasks${suffix}`, { headers: this.headers() }),
    );
    return body.tasks;
  }

  async users(): Promise<UserView[]> {
    const body = await asJson<{ users: UserView[] }>(
      await fetch(`${this.baseUrl}/admin/users`, { headers: this.headers() }),
    );
    return body.users;
  }

  async events(since = 0): Promise<EventView[]> {
    const body = await asJson<{ events: EventView[] }>(
      await fetch(`${this.baseUrl}/admin/events?since=${since}`, {
        headers: this.headers(),
      }),
    );
    return body.events;
  }
}
