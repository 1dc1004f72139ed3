import { describe, expect, it } from "vitest";

import { ServiceError } from "../src/api.js";
import type { InstructionResponse, SessionSnapshot, StepResponse } from "../src/api.js";
import {
  candidatesReceived,
  initialState,
  isStopped,
  programLines,
  requestFailed,
  selectionCommitted,
  sessionCreated,
  stepCompleted,
} from "../src/state.js";

function snapshot(overrides: Partial<SessionSnapshot> = {}): SessionSnapshot {
  return {
    session_id: "abc",
    status: "running",
    mode: "reference",
    iterations: [],
    images: {},
    composed_program: { steps: [], provenance: "" },
    current_source_url: "/sessions/abc/images/current",
    ...overrides,
  };
}

describe("programLines", () => {
  it("renders one signed line per step", () => {
    const lines = programLines({
      steps: [
        { filter: "exposure", param: 0.3 },
        { filter: "saturation", param: -0.5 },
      ],
      provenance: "",
    });
    expect(lines).toEqual(["exposure +0.3", "saturation -0.5"]);
  });
});

describe("sessionCreated", () => {
  it("resets the model and keeps the session id", () => {
    const vm = sessionCreated(initialState(), {
      session_id: "abc",
      state: snapshot({ mode: "instruction" }),
    });
    expect(vm.sessionId).toBe("abc");
    expect(vm.mode).toBe("instruction");
    expect(vm.timeline).toEqual([]);
  });
});

describe("candidatesReceived", () => {
  it("preserves service index order and verbatim program text", () => {
    const response: InstructionResponse = {
      status: "awaiting_user",
      candidates: [
        {
          index: 0,
          image_url: "/img/0",
          program: { steps: [{ filter: "exposure", param: 0.2 }], provenance: "" },
          program_text: "adj = filter.exposure(0.2)",
        },
        {
          index: 1,
          image_url: "/img/1",
          program: { steps: [{ filter: "exposure", param: 0.4 }], provenance: "" },
          program_text: "adj = filter.exposure(0.4)",
        },
      ],
    };
    const vm = candidatesReceived(initialState(), response);
    expect(vm.awaitingChoice).toBe(true);
    expect(vm.candidates.map((c) => c.index)).toEqual([0, 1]);
    expect(vm.candidates[1].programText).toBe("adj = filter.exposure(0.4)");
    // No sigma badges in instruction mode: scores are user choices here.
    expect(vm.candidates.every((c) => c.sigma === null)).toBe(true);
  });
});

describe("stepCompleted", () => {
  it("extracts the selected sigma per iteration into the trajectory", () => {
    const record = {
      iteration: 0,
      scores: [0.5, 0.2, 0.9],
      selected_index: 1,
      selection_source: "score",
      programs: [
        { steps: [{ filter: "exposure", param: 0.1 }], provenance: "" },
        { steps: [{ filter: "contrast", param: 0.2 }], provenance: "" },
      ],
      skipped: false,
    };
    const step: StepResponse = { iteration_record: record, status: "running" };
    const snap = snapshot({
      iterations: [record],
      images: { iter0_selected: "/img/sel", iter0_cand1: "/img/c1" },
    });
    const vm = stepCompleted(initialState(), step, snap);
    expect(vm.sigmaTrajectory).toEqual([0.2]);
    expect(vm.timeline).toHaveLength(1);
    expect(vm.timeline[0].imageUrl).toBe("/img/sel");
    expect(vm.candidates).toHaveLength(3);
    expect(vm.candidates[1].selected).toBe(true);
    expect(vm.candidates[1].sigma).toBe(0.2);
  });
});

describe("selectionCommitted", () => {
  it("clears the pending candidates and updates the timeline", () => {
    const snap = snapshot({
      status: "running",
      iterations: [
        {
          iteration: 0,
          scores: null,
          selected_index: 1,
          selection_source: "user",
          programs: [],
          skipped: false,
        },
      ],
      images: { iter0_selected: "/img/sel" },
    });
    let vm = candidatesReceived(initialState(), {
      status: "awaiting_user",
      candidates: [],
    });
    vm = selectionCommitted(vm, snap);
    expect(vm.awaitingChoice).toBe(false);
    expect(vm.candidates).toEqual([]);
    expect(vm.timeline[0].selectionSource).toBe("user");
    expect(vm.timeline[0].sigma).toBeNull();
  });
});

describe("requestFailed", () => {
  it("maps 502 to a retryable error banner", () => {
    const vm = requestFailed(initialState(), new ServiceError("backend down", 502, true));
    expect(vm.banner?.kind).toBe("error");
    expect(vm.banner?.retryable).toBe(true);
  });

  it("maps 409 to a state hint", () => {
    const vm = requestFailed(initialState(), new ServiceError("not awaiting", 409, false));
    expect(vm.banner?.kind).toBe("hint");
  });
});

describe("isStopped", () => {
  it("recognizes stopped statuses", () => {
    const vm = { ...initialState(), status: "stopped_budget" };
    expect(isStopped(vm)).toBe(true);
    expect(isStopped(initialState())).toBe(false);
  });
});
