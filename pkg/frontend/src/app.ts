/**
 * Application wiring: form controls drive the service API, responses fold
 * into the view model, and the model is re-rendered. One request in flight
 * per session at a time; controls are disabled while waiting.
 */
import { RetouchApi } from "./api.js";
import { render } from "./render.js";
import {
  candidatesReceived,
  hint,
  initialState,
  isStopped,
  requestFailed,
  selectionCommitted,
  sessionCreated,
  setBusy,
  stepCompleted,
} from "./state.js";
import type { ViewModel } from "./state.js";

export interface AppControls {
  createReferenceSession(source: Blob, refs: Blob[]): Promise<void>;
  createInstructionSession(source: Blob): Promise<void>;
  sendInstruction(text: string): Promise<void>;
  selectCandidate(index: number): Promise<void>;
  stepOnce(): Promise<void>;
  exportProgram(): Promise<string>;
  getModel(): ViewModel;
}

export function createApp(root: HTMLElement, api: RetouchApi): AppControls {
  let vm = initialState();

  const update = (next: ViewModel) => {
    vm = next;
    render(root, vm, { onSelect: (index) => void controls.selectCandidate(index) });
  };

  /** Serializes requests: the UI keeps at most one in flight. */
  async function guarded(work: () => Promise<ViewModel>): Promise<void> {
    if (vm.busy) {
      update(hint(vm, "Still waiting for the previous request."));
      return;
    }
    update(setBusy(vm, true));
    try {
      update(setBusy(await work(), false));
    } catch (error) {
      update(setBusy(requestFailed(vm, error), false));
    }
  }

  const controls: AppControls = {
    async createReferenceSession(source, refs) {
      await guarded(async () => {
        const response = await api.createSession(source, { mode: "reference", refs });
        return sessionCreated(vm, withAbsoluteUrls(response, api));
      });
    },

    async createInstructionSession(source) {
      await guarded(async () => {
        const response = await api.createSession(source, {
          mode: "instruction",
          config: { agent: "chat" },
        });
        return sessionCreated(vm, withAbsoluteUrls(response, api));
      });
    },

    async sendInstruction(text) {
      if (!vm.sessionId || vm.mode !== "instruction") {
        update(hint(vm, "Create an instruction session first."));
        return;
      }
      if (vm.awaitingChoice) {
        update(hint(vm, "Select one of the candidates before the next instruction."));
        return;
      }
      const sessionId = vm.sessionId;
      await guarded(async () => {
        const response = await api.sendInstruction(sessionId, text);
        response.candidates = response.candidates.map((c) => ({
          ...c,
          image_url: api.resolve(c.image_url),
        }));
        return candidatesReceived(vm, response);
      });
    },

    async selectCandidate(index) {
      if (!vm.awaitingChoice) {
        // State hint only; no request leaves the app.
        update(hint(vm, "Nothing to select: ask for candidates first."));
        return;
      }
      const sessionId = vm.sessionId!;
      await guarded(async () => {
        const response = await api.select(sessionId, index);
        return selectionCommitted(vm, absoluteSnapshot(response.state, api));
      });
    },

    async stepOnce() {
      if (!vm.sessionId || vm.mode !== "reference") {
        update(hint(vm, "Create a reference session first."));
        return;
      }
      if (isStopped(vm)) {
        update(hint(vm, `Session already finished (${vm.status}).`));
        return;
      }
      const sessionId = vm.sessionId;
      await guarded(async () => {
        const response = await api.step(sessionId);
        const snapshot = absoluteSnapshot(await api.getSession(sessionId), api);
        return stepCompleted(vm, response, snapshot);
      });
    },

    async exportProgram() {
      if (!vm.sessionId) {
        update(hint(vm, "No session to export."));
        return "";
      }
      return api.fetchProgramText(vm.sessionId);
    },

    getModel() {
      return vm;
    },
  };

  update(vm);
  return controls;
}

function absoluteSnapshot<T extends { images: Record<string, string>; current_source_url: string }>(
  snapshot: T,
  api: RetouchApi,
): T {
  const images: Record<string, string> = {};
  for (const [key, value] of Object.entries(snapshot.images)) {
    images[key] = api.resolve(value);
  }
  return { ...snapshot, images, current_source_url: api.resolve(snapshot.current_source_url) };
}

function withAbsoluteUrls<T extends { state: any }>(response: T, api: RetouchApi): T {
  return { ...response, state: absoluteSnapshot(response.state, api) };
}
