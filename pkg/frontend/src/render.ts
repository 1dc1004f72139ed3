/**
 * DOM rendering for the session view model. Pure DOM construction: every
 * pixel and number shown comes from a service response carried in the model.
 */
import { programLines } from "./state.js";
import type { ViewModel } from "./state.js";

export interface Handlers {
  onSelect(index: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderBanner(vm: ViewModel): HTMLElement | null {
  if (!vm.banner) return null;
  const banner = el("div", `banner banner-${vm.banner.kind}`, vm.banner.text);
  banner.setAttribute("role", vm.banner.kind === "error" ? "alert" : "status");
  if (vm.banner.retryable) banner.classList.add("banner-retryable");
  return banner;
}

function sigmaBadge(sigma: number | null): HTMLElement | null {
  if (sigma === null) return null;
  const badge = el("span", "sigma-badge", `σ ${sigma.toFixed(4)}`);
  badge.dataset.sigma = String(sigma);
  return badge;
}

function renderCandidates(vm: ViewModel, handlers: Handlers): HTMLElement {
  const section = el("section", "candidates");
  section.id = "candidates";
  if (vm.candidates.length === 0) {
    section.appendChild(el("p", "empty", "No candidates yet."));
    return section;
  }
  const grid = el("div", "candidate-grid");
  for (const candidate of vm.candidates) {
    const card = el("div", "candidate-card");
    card.dataset.index = String(candidate.index);
    if (candidate.selected) card.classList.add("selected");

    if (candidate.imageUrl) {
      const img = el("img", "candidate-image") as HTMLImageElement;
      img.src = candidate.imageUrl;
      img.alt = `candidate ${candidate.index}`;
      card.appendChild(img);
      const link = el("a", "download-link", "full resolution") as HTMLAnchorElement;
      link.href = candidate.imageUrl;
      link.download = `candidate-${candidate.index}.png`;
      card.appendChild(link);
    }

    // White-box fidelity: the program text is the service's, verbatim.
    card.appendChild(el("pre", "program", candidate.programText));

    const badge = sigmaBadge(candidate.sigma);
    if (badge) card.appendChild(badge);

    if (vm.awaitingChoice) {
      const button = el("button", "select-button", `Use candidate ${candidate.index + 1}`);
      button.addEventListener("click", () => handlers.onSelect(candidate.index));
      button.disabled = vm.busy;
      card.appendChild(button);
    }
    grid.appendChild(card);
  }
  section.appendChild(grid);
  return section;
}

function renderTimeline(vm: ViewModel): HTMLElement {
  const section = el("section", "timeline");
  section.id = "timeline";
  section.appendChild(el("h2", undefined, "Timeline"));
  const list = el("ol", "timeline-list");
  for (const entry of vm.timeline) {
    const item = el("li", "timeline-entry");
    item.dataset.iteration = String(entry.iteration);
    if (entry.imageUrl) {
      const img = el("img", "timeline-thumb") as HTMLImageElement;
      img.src = entry.imageUrl;
      img.alt = `step ${entry.iteration}`;
      item.appendChild(img);
    }
    const label = entry.keptSource
      ? `step ${entry.iteration}: kept source (${entry.selectionSource})`
      : `step ${entry.iteration}: selected (${entry.selectionSource})`;
    item.appendChild(el("span", "timeline-label", label));
    const badge = vm.mode === "reference" ? sigmaBadge(entry.sigma) : null;
    if (badge) item.appendChild(badge);
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}

function renderTrajectory(vm: ViewModel): HTMLElement | null {
  if (vm.mode !== "reference" || vm.sigmaTrajectory.length < 2) return null;
  const values = vm.sigmaTrajectory;
  const width = 240;
  const height = 60;
  const max = Math.max(...values, 1e-9);
  const points = values
    .map((v, i) => {
      const x = (i / (values.length - 1)) * (width - 8) + 4;
      const y = height - 6 - (v / max) * (height - 12);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  const wrap = el("figure", "trajectory");
  wrap.id = "trajectory";
  const svgNS = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNS, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  const line = document.createElementNS(svgNS, "polyline");
  line.setAttribute("points", points);
  line.setAttribute("fill", "none");
  line.setAttribute("stroke", "currentColor");
  line.setAttribute("stroke-width", "2");
  svg.appendChild(line);
  wrap.appendChild(svg);
  const caption = el("figcaption", undefined, "selection score per step");
  wrap.appendChild(caption);
  return wrap;
}

function renderProgram(vm: ViewModel): HTMLElement {
  const section = el("section", "composed-program");
  section.id = "composed-program";
  section.appendChild(el("h2", undefined, "Composed program"));
  const lines = vm.composedProgram ? programLines(vm.composedProgram) : [];
  section.appendChild(
    el("pre", "program", lines.length ? lines.join("\n") : "(no steps yet)"),
  );
  return section;
}

export function render(root: HTMLElement, vm: ViewModel, handlers: Handlers): void {
  root.textContent = "";
  const status = el("div", "status-line", `session: ${vm.sessionId ?? "-"} | ${vm.status}`);
  status.id = "status";
  root.appendChild(status);

  const banner = renderBanner(vm);
  if (banner) root.appendChild(banner);

  if (vm.currentSourceUrl) {
    const figure = el("figure", "current-source");
    figure.id = "current-source";
    const img = el("img") as HTMLImageElement;
    img.src = vm.currentSourceUrl;
    img.alt = "current source";
    figure.appendChild(img);
    const link = el("a", "download-link", "download full resolution") as HTMLAnchorElement;
    link.href = vm.currentSourceUrl;
    link.download = "retouched.png";
    figure.appendChild(link);
    root.appendChild(figure);
  }

  root.appendChild(renderCandidates(vm, handlers));
  const trajectory = renderTrajectory(vm);
  if (trajectory) root.appendChild(trajectory);
  root.appendChild(renderTimeline(vm));
  root.appendChild(renderProgram(vm));
}
