/**
 * Typed client for the retouching session service. Every network request the
 * UI makes goes through this class, so tests can intercept the fetch function
 * and assert nothing else is contacted.
 */

export interface ProgramStep {
  filter: string;
  param: number;
}

export interface Program {
  steps: ProgramStep[];
  provenance: string;
}

export interface Candidate {
  index: number;
  image_url: string;
  program: Program;
  program_text: string;
}

export interface IterationRecord {
  iteration: number;
  scores: number[] | null;
  selected_index: number;
  selection_source: string;
  programs: Program[];
  skipped: boolean;
}

export interface SessionSnapshot {
  session_id: string;
  status: string;
  mode: string;
  iterations: IterationRecord[];
  images: Record<string, string>;
  composed_program: Program;
  current_source_url: string;
}

export interface CreateResponse {
  session_id: string;
  state: SessionSnapshot;
}

export interface StepResponse {
  iteration_record: IterationRecord;
  status: string;
}

export interface InstructionResponse {
  candidates: Candidate[];
  status: string;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly retryable: boolean,
  ) {
    super(message);
  }
}

async function toServiceError(response: Response): Promise<ServiceError> {
  let message = `HTTP ${response.status}`;
  let retryable = false;
  try {
    const body = await response.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail) {
      message = detail.message ?? message;
      retryable = detail.retryable === true;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ServiceError(message, response.status, retryable);
}

export interface CreateOptions {
  mode: "reference" | "instruction";
  refs?: Blob[];
  config?: Record<string, unknown>;
}

export class RetouchApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  resolve(path: string): string {
    return new URL(path, this.baseUrl).toString();
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(this.resolve(path), init);
    if (!response.ok) {
      throw await toServiceError(response);
    }
    return response;
  }

  async createSession(source: Blob, options: CreateOptions): Promise<CreateResponse> {
    const form = new FormData();
    form.append("source", source, "source.png");
    for (const [i, ref] of (options.refs ?? []).entries()) {
      form.append("refs", ref, `ref${i}.png`);
    }
    form.append("mode", options.mode);
    if (options.config) {
      form.append("config", JSON.stringify(options.config));
    }
    const response = await this.request("sessions", { method: "POST", body: form });
    return response.json();
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    const response = await this.request(`sessions/${sessionId}`);
    return response.json();
  }

  async step(sessionId: string): Promise<StepResponse> {
    const response = await this.request(`sessions/${sessionId}/step`, { method: "POST" });
    return response.json();
  }

  async sendInstruction(sessionId: string, text: string): Promise<InstructionResponse> {
    const response = await this.request(`sessions/${sessionId}/instruction`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    return response.json();
  }

  async select(sessionId: string, index: number): Promise<{ state: SessionSnapshot }> {
    const response = await this.request(`sessions/${sessionId}/select`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ index }),
    });
    return response.json();
  }

  /** Raw bytes of the composed program, exactly as the service serves them. */
  async fetchProgramText(sessionId: string): Promise<string> {
    const response = await this.request(`sessions/${sessionId}/program`);
    return response.text();
  }

  async fetchImageBlob(path: string): Promise<Blob> {
    const response = await this.request(path);
    return response.blob();
  }
}
