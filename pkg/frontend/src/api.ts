// Typed client for the tutorkit HTTP API (/api/v1). The UI owns no learning
// logic: every judgment, transition, and hint comes from these endpoints.

export type ActivityStatus = "NotAttempted" | "Attempted" | "Completed";

export interface ProgressView {
  activities: { activity_id: string; status: ActivityStatus }[];
  modules: { module_id: string; diagnosis_unlocked: boolean }[];
}

export interface PackOutline {
  schema_version: string;
  modules: {
    id: string;
    domain: "CK" | "PCK";
    title: string;
    activities: { id: string; title: string }[];
    diagnosis_id: string;
  }[];
}

export interface SessionStatePayload {
  session_id: string;
  activity_id: string;
  stage_index: number;
  expectation_status: Record<string, "Unmet" | "Met" | "Skipped">;
  lifecycle: "InProgress" | "Completed";
  summary?: string;
}

export interface StartResponse {
  state: SessionStatePayload;
  question_text: string;
  image_refs: string[];
  title: string;
}

export interface ToolDirective {
  tool_id: string;
  trigger_reason: string;
}

export interface TurnResponse {
  reply: string;
  tool_directives: ToolDirective[];
  image_refs: string[];
  decision: { action: string; message: string };
  event_ids: number[];
  state: SessionStatePayload;
}

export interface DialogueEntry {
  event_id: number;
  speaker: "user" | "system";
  component: string | null;
  text: string;
  tool_directives?: ToolDirective[];
  image_refs?: string[];
}

export interface DiagnosisQuestion {
  id: string;
  prompt: string;
  options: { option_id: string; text: string }[];
  multi_select: boolean;
}

export interface DiagnosisAttempt {
  attempt_id: string;
  diagnosis_id: string;
  cursor: number;
  selections: Record<string, string[]>;
  finished: boolean;
}

export interface DiagnosisScore {
  per_question: Record<string, boolean>;
  total_correct: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  token: string | null = null;

  constructor(
    public baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchImpl(`${this.baseUrl}/api/v1${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = await response.json();
        if (doc && typeof doc.detail === "string") detail = doc.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    if (response.status === 204) return undefined as T;
    return (await response.json()) as T;
  }

  async register(username: string, password: string): Promise<void> {
    await this.request("POST", "/auth/register", { username, password });
  }

  async login(username: string, password: string): Promise<void> {
    const doc = await this.request<{ token: string }>("POST", "/auth/login", { username, password });
    this.token = doc.token;
  }

  progress(): Promise<ProgressView> {
    return this.request("GET", "/progress");
  }

  packOutline(): Promise<PackOutline> {
    return this.request("GET", "/pack/outline");
  }

  startActivity(activityId: string): Promise<StartResponse> {
    return this.request("POST", `/activity/${activityId}/start`);
  }

  activityState(activityId: string): Promise<SessionStatePayload> {
    return this.request("GET", `/activity/${activityId}/state`);
  }

  dialogue(activityId: string, k = 100): Promise<{ entries: DialogueEntry[] }> {
    return this.request("GET", `/activity/${activityId}/dialogue?k=${k}`);
  }

  sendMessage(activityId: string, text: string): Promise<TurnResponse> {
    return this.request("POST", `/activity/${activityId}/message`, {
      text,
      client_timestamp: Date.now(),
    });
  }

  sendToolEvent(activityId: string, toolId: string, data: unknown): Promise<TurnResponse> {
    return this.request("POST", `/activity/${activityId}/tool-event`, { tool_id: toolId, data });
  }

  vote(targetEventId: number, vote: "up" | "down", note?: string): Promise<void> {
    return this.request("POST", "/feedback", { target_event_id: targetEventId, vote, note });
  }

  notebook(): Promise<{ text: string }> {
    return this.request("GET", "/notebook");
  }

  saveNotebook(text: string): Promise<void> {
    return this.request("PUT", "/notebook", { text });
  }

  openDiagnosis(diagnosisId: string): Promise<{ attempt: DiagnosisAttempt; questions: DiagnosisQuestion[] }> {
    return this.request("POST", `/diagnosis/${diagnosisId}/open`);
  }

  selectOption(
    diagnosisId: string,
    questionId: string,
    optionId: string,
    selected: boolean,
  ): Promise<{ attempt: DiagnosisAttempt }> {
    return this.request("POST", `/diagnosis/${diagnosisId}/select`, {
      question_id: questionId,
      option_id: optionId,
      selected,
    });
  }

  finishDiagnosis(diagnosisId: string): Promise<{ attempt: DiagnosisAttempt; score: DiagnosisScore }> {
    return this.request("POST", `/diagnosis/${diagnosisId}/finish`);
  }

  assetUrl(ref: string): string {
    return `${this.baseUrl}/assets/${ref}`;
  }
}

// One in-flight turn per session is the server contract (409 while busy).
// Retry 409s quietly after a short pause; anything else propagates so the
// page can offer an explicit retry affordance.
export async function sendWithRetry(
  send: () => Promise<TurnResponse>,
  onWaiting: () => void,
  retryDelayMs = 400,
  maxRetries = 20,
): Promise<TurnResponse> {
  for (let attempt = 0; ; attempt++) {
    try {
      return await send();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409 && attempt < maxRetries) {
        onWaiting();
        await new Promise((resolve) => setTimeout(resolve, retryDelayMs));
        continue;
      }
      throw error;
    }
  }
}
