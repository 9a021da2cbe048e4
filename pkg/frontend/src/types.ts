// Wire shapes returned by the service's read endpoints and webhook.

export type Direction = "in" | "out";

export interface MessageView {
  message_id: string;
  direction: Direction;
  kind: string;
  at: string;
  text: string;
  reaction: string | null;
  target_message_id: string | null;
  buttons: string[];
  suggestions: string[];
  header: string | null;
  audio: boolean;
}

export interface TaskView {
  task_id: string;
  query_id: string;
  answer_id: string;
  state: string;
  track: string;
  question: string;
  bot_answer: string;
  citations: string[];
  is_unknown: boolean;
  demographics: string;
  operating_expert_id: string;
  escalation_expert_id: string;
  deciding_expert_id: string | null;
  created_at: string;
  escalated_at: string | null;
  buttons: string[];
  final_answer: string | null;
  prompt_message_ids: Record<string, string>;
}

export interface UserView {
  user_id: string;
  role: string;
  language: string;
  channel_address: string;
  demographics: string;
  deactivated: boolean;
}

export interface WebhookOutcome {
  kind: string;
  query_id?: string;
  answer_id?: string;
  task_id?: string;
  state?: string;
  error?: string;
}

export interface EventView {
  offset: number;
  at: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface OnboardForm {
  operating_doctor_id: string;
  operating_coordinator_id: string;
  surgery_date: string;
  patient_phone?: string;
  attendant_phone?: string;
  patient_language?: string;
  attendant_language?: string;
  demographics?: string;
}
