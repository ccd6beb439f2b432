/** DOM wiring: binds the annotation controller to the page. */

import { ApiClient } from "./api.js";
import { AnnotationController, UiState } from "./controller.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

export function mount(root: Document, api: ApiClient): AnnotationController {
  const controller = new AnnotationController(api);
  const startForm = el<HTMLFormElement>("start-form");
  const imageInput = el<HTMLInputElement>("image-id");
  const workspace = el<HTMLDivElement>("workspace");
  const image = el<HTMLImageElement>("image");
  const input = el<HTMLInputElement>("caption");
  const dropdown = el<HTMLUListElement>("suggestions");
  const submitButton = el<HTMLButtonElement>("submit");
  const statsPanel = el<HTMLDivElement>("stats");
  const errorPanel = el<HTMLDivElement>("error");

  function renderStats(state: UiState): string {
    const s = state.stats;
    if (s === null) return "";
    return (
      `rounds: ${s.T} · selections: ${s.num_selections} · ` +
      `edits: ${s.accumulated_edits} · accumulated edit distance: ${s.accumulated_levd} · ` +
      `mode: ${s.mode}`
    );
  }

  controller.onChange = (state: UiState) => {
    if (state.sessionId !== null) {
      startForm.hidden = true;
      workspace.hidden = false;
      if (state.imageUrl !== null && image.src !== state.imageUrl) {
        image.src = state.imageUrl;
      }
    }
    if (input.value !== state.text) input.value = state.text;
    dropdown.replaceChildren(
      ...state.suggestions.map((candidate) => {
        const item = root.createElement("li");
        item.textContent = candidate.text;
        item.dataset.rank = String(candidate.rank);
        item.addEventListener("mousedown", (event) => {
          event.preventDefault(); // keep focus in the input
          void controller.onSelect(candidate.rank);
          input.focus();
          input.setSelectionRange(input.value.length, input.value.length);
        });
        return item;
      }),
    );
    dropdown.hidden = state.suggestions.length === 0;
    input.disabled = state.submitted;
    submitButton.disabled = state.submitted;
    statsPanel.textContent = renderStats(state);
    statsPanel.hidden = state.stats === null;
    errorPanel.textContent = state.error ?? "";
    errorPanel.hidden = state.error === null;
  };

  const pushEdit = () => {
    controller.onEdit(input.value, input.selectionStart ?? input.value.length);
  };
  input.addEventListener("input", pushEdit);
  input.addEventListener("compositionend", pushEdit);
  // caret moves alone also change what a completion means
  input.addEventListener("keyup", (event) => {
    if (event.key.startsWith("Arrow") || event.key === "Home" || event.key === "End") {
      pushEdit();
    }
  });
  input.addEventListener("click", pushEdit);

  submitButton.addEventListener("click", () => void controller.onSubmit());

  startForm.addEventListener("submit", (event) => {
    event.preventDefault();
    const imageId = imageInput.value.trim();
    if (imageId.length > 0) {
      void controller.start(imageId).catch((err) => {
        errorPanel.textContent = String(err);
        errorPanel.hidden = false;
      });
    }
  });

  const preset = new URLSearchParams(root.location?.search ?? "").get("image");
  if (preset !== null && preset.length > 0) {
    imageInput.value = preset;
    void controller.start(preset).catch((err) => {
      errorPanel.textContent = String(err);
      errorPanel.hidden = false;
    });
  }
  return controller;
}

if (typeof document !== "undefined" && document.getElementById("caption") !== null) {
  mount(document, new ApiClient(""));
}
