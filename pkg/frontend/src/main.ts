/** Browser entry point: binds the toolbar forms to the app controls. */
import { RetouchApi } from "./api.js";
import { createApp } from "./app.js";

function requireEl<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function bootstrap(serviceBaseUrl?: string): void {
  const base = serviceBaseUrl ?? (window as any).RETOUCH_SERVICE_URL ?? window.location.origin + "/";
  const api = new RetouchApi(base);
  const app = createApp(requireEl("app"), api);

  const sourceInput = requireEl<HTMLInputElement>("source-file");
  const refsInput = requireEl<HTMLInputElement>("ref-files");
  const startReference = requireEl<HTMLButtonElement>("start-reference");
  const startInstruction = requireEl<HTMLButtonElement>("start-instruction");
  const stepButton = requireEl<HTMLButtonElement>("step-button");
  const instructionInput = requireEl<HTMLInputElement>("instruction-text");
  const instructionSend = requireEl<HTMLButtonElement>("instruction-send");
  const exportButton = requireEl<HTMLButtonElement>("export-program");

  startReference.addEventListener("click", () => {
    const source = sourceInput.files?.[0];
    const refs = Array.from(refsInput.files ?? []);
    if (!source || refs.length === 0) {
      alert("Pick a source image and at least one reference image.");
      return;
    }
    void app.createReferenceSession(source, refs);
  });

  startInstruction.addEventListener("click", () => {
    const source = sourceInput.files?.[0];
    if (!source) {
      alert("Pick a source image.");
      return;
    }
    void app.createInstructionSession(source);
  });

  stepButton.addEventListener("click", () => void app.stepOnce());

  instructionSend.addEventListener("click", () => {
    const text = instructionInput.value.trim();
    if (text) void app.sendInstruction(text);
  });

  exportButton.addEventListener("click", async () => {
    const text = await app.exportProgram();
    if (!text) return;
    const blob = new Blob([text], { type: "application/json" });
    const url = URL.createObjectURL(blob);
    const link = document.createElement("a");
    link.href = url;
    link.download = "program.retouch.json";
    link.click();
    URL.revokeObjectURL(url);
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  bootstrap();
}
