/**
 * View-model state and pure transition functions. The UI never computes
 * pixels or scores itself: everything here is bookkeeping over service
 * responses, which keeps the module trivially testable.
 */
import type {
  Candidate,
  CreateResponse,
  InstructionResponse,
  IterationRecord,
  Program,
  ServiceError,
  SessionSnapshot,
  StepResponse,
} from "./api.js";

export type Banner = { kind: "error" | "hint"; text: string; retryable?: boolean } | null;

export interface TimelineEntry {
  iteration: number;
  imageUrl: string | null;
  selectionSource: string;
  sigma: number | null;
  keptSource: boolean;
}

export interface CandidateView {
  index: number;
  imageUrl: string;
  programText: string;
  sigma: number | null;
  selected: boolean;
}

export interface ViewModel {
  sessionId: string | null;
  mode: "reference" | "instruction" | null;
  status: string;
  busy: boolean;
  banner: Banner;
  currentSourceUrl: string | null;
  candidates: CandidateView[];
  awaitingChoice: boolean;
  timeline: TimelineEntry[];
  sigmaTrajectory: number[];
  composedProgram: Program | null;
}

export function initialState(): ViewModel {
  return {
    sessionId: null,
    mode: null,
    status: "no session",
    busy: false,
    banner: null,
    currentSourceUrl: null,
    candidates: [],
    awaitingChoice: false,
    timeline: [],
    sigmaTrajectory: [],
    composedProgram: null,
  };
}

/** Human-readable one-line-per-step rendering of a program. */
export function programLines(program: Program): string[] {
  return program.steps.map(
    (step) => `${step.filter} ${step.param >= 0 ? "+" : ""}${step.param}`,
  );
}

function sigmaOf(record: IterationRecord): number | null {
  if (!record.scores || record.scores.length === 0) {
    return null;
  }
  return record.scores[record.selected_index];
}

function timelineFromSnapshot(snapshot: SessionSnapshot): TimelineEntry[] {
  return snapshot.iterations.map((record) => ({
    iteration: record.iteration,
    imageUrl: snapshot.images[`iter${record.iteration}_selected`] ?? null,
    selectionSource: record.selection_source,
    sigma: sigmaOf(record),
    keptSource: record.selection_source === "score" && record.selected_index === 0,
  }));
}

function trajectoryFromSnapshot(snapshot: SessionSnapshot): number[] {
  return snapshot.iterations
    .map(sigmaOf)
    .filter((value): value is number => value !== null);
}

/** Candidate grid for a finished reference-mode step, sigma badges included. */
function referenceCandidates(snapshot: SessionSnapshot, record: IterationRecord): CandidateView[] {
  if (!record.scores) {
    return [];
  }
  return record.scores.map((sigma, index) => ({
    index,
    imageUrl: snapshot.images[`iter${record.iteration}_cand${index}`] ?? "",
    programText:
      index === 0
        ? "(current source)"
        : record.programs[index - 1]
          ? programLinesText(record.programs[index - 1])
          : "",
    sigma,
    selected: index === record.selected_index,
  }));
}

function programLinesText(program: Program): string {
  return programLines(program).join("\n");
}

export function sessionCreated(vm: ViewModel, response: CreateResponse): ViewModel {
  const snapshot = response.state;
  return {
    ...initialState(),
    sessionId: response.session_id,
    mode: snapshot.mode as ViewModel["mode"],
    status: snapshot.status,
    currentSourceUrl: snapshot.current_source_url,
    composedProgram: snapshot.composed_program,
  };
}

export function stepCompleted(
  vm: ViewModel,
  response: StepResponse,
  snapshot: SessionSnapshot,
): ViewModel {
  return {
    ...vm,
    status: response.status,
    banner: null,
    currentSourceUrl: snapshot.current_source_url,
    candidates: referenceCandidates(snapshot, response.iteration_record),
    awaitingChoice: false,
    timeline: timelineFromSnapshot(snapshot),
    sigmaTrajectory: trajectoryFromSnapshot(snapshot),
    composedProgram: snapshot.composed_program,
  };
}

export function candidatesReceived(vm: ViewModel, response: InstructionResponse): ViewModel {
  // Candidate order on screen is exactly the service's index order, and each
  // program is shown verbatim.
  const candidates = response.candidates.map((candidate: Candidate) => ({
    index: candidate.index,
    imageUrl: candidate.image_url,
    programText: candidate.program_text,
    sigma: null,
    selected: false,
  }));
  return {
    ...vm,
    status: response.status,
    banner: null,
    candidates,
    awaitingChoice: true,
  };
}

export function selectionCommitted(vm: ViewModel, snapshot: SessionSnapshot): ViewModel {
  return {
    ...vm,
    status: snapshot.status,
    banner: null,
    currentSourceUrl: snapshot.current_source_url,
    candidates: [],
    awaitingChoice: false,
    timeline: timelineFromSnapshot(snapshot),
    sigmaTrajectory: trajectoryFromSnapshot(snapshot),
    composedProgram: snapshot.composed_program,
  };
}

export function requestFailed(vm: ViewModel, error: unknown): ViewModel {
  const serviceError = error as ServiceError;
  if (typeof serviceError?.status === "number") {
    if (serviceError.status === 502) {
      return {
        ...vm,
        banner: {
          kind: "error",
          text: `Backend failure: ${serviceError.message}. You can retry.`,
          retryable: true,
        },
      };
    }
    if (serviceError.status === 409) {
      return { ...vm, banner: { kind: "hint", text: serviceError.message } };
    }
    return { ...vm, banner: { kind: "error", text: serviceError.message } };
  }
  return { ...vm, banner: { kind: "error", text: String(error) } };
}

export function hint(vm: ViewModel, text: string): ViewModel {
  return { ...vm, banner: { kind: "hint", text } };
}

export function setBusy(vm: ViewModel, busy: boolean): ViewModel {
  return { ...vm, busy };
}

export function isStopped(vm: ViewModel): boolean {
  return vm.status.startsWith("stopped");
}
