/** Single-page chat app: start page with model picker and example prompts,
 * then a conversation view. One in-flight message at a time (the send button
 * stays disabled while a reply is pending, mirroring the server's 409 rule);
 * the session id lives in memory only, so a refresh starts a new session.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderReply } from "./cards.js";
import type { ModelInfo } from "./types.js";

export interface AppOptions {
  examplePrompts?: string[];
  maxUploadBytes?: number;
  imageBase?: string;
}

const DEFAULT_PROMPTS = [
  "What can you do?",
  "How many records and collections are there?",
  "Show me some beautiful minerals",
];

const SUPPORTED_IMAGE_TYPES = ["image/png", "image/jpeg"];

export interface AppState {
  sessionId: string | null;
  pending: boolean;
  attachedImage: File | null;
  models: ModelInfo[];
}

export interface AppController {
  state: AppState;
  refreshModels(): Promise<void>;
  attachImage(file: File): boolean;
  send(text?: string): Promise<void>;
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

export function createApp(
  root: HTMLElement,
  client: ApiClient,
  options: AppOptions = {},
): AppController {
  const maxUploadBytes = options.maxUploadBytes ?? 8 * 1024 * 1024;
  const imageBase = options.imageBase ?? "";
  const state: AppState = {
    sessionId: null,
    pending: false,
    attachedImage: null,
    models: [],
  };

  root.innerHTML = "";
  const banner = el("div", "retry-banner");
  banner.hidden = true;
  const bannerText = el("span", "retry-banner-text");
  const retryButton = el("button", "retry-button", "Retry");
  banner.append(bannerText, retryButton);

  const start = el("section", "start-page");
  start.appendChild(el("h1", "app-title", "Explore the collections"));
  const pickerLabel = el("label", "picker-label", "Model: ");
  const picker = el("select", "model-picker");
  picker.id = "model-picker";
  pickerLabel.appendChild(picker);
  start.appendChild(pickerLabel);
  const prompts = el("div", "example-prompts");
  for (const prompt of options.examplePrompts ?? DEFAULT_PROMPTS) {
    const button = el("button", "example-prompt", prompt);
    button.addEventListener("click", () => void send(prompt));
    prompts.appendChild(button);
  }
  start.appendChild(prompts);

  const messages = el("section", "messages");
  messages.id = "messages";

  const composer = el("form", "composer");
  const input = el("textarea", "composer-input");
  input.id = "composer-input";
  input.placeholder = "Ask about the collections…";
  const fileInput = el("input", "composer-file") as HTMLInputElement;
  fileInput.type = "file";
  fileInput.accept = SUPPORTED_IMAGE_TYPES.join(",");
  const uploadPreview = el("div", "upload-preview");
  uploadPreview.hidden = true;
  const uploadError = el("div", "upload-error");
  uploadError.hidden = true;
  const sendButton = el("button", "send-button", "Send");
  sendButton.id = "send-button";
  sendButton.type = "submit";
  composer.append(input, fileInput, uploadPreview, uploadError, sendButton);

  root.append(banner, start, messages, composer);

  function setPending(pending: boolean): void {
    state.pending = pending;
    sendButton.disabled = pending;
    composer.dataset.pending = pending ? "true" : "false";
  }

  function showBanner(text: string): void {
    bannerText.textContent = text;
    banner.hidden = false;
  }

  async function refreshModels(): Promise<void> {
    try {
      const response = await client.listModels();
      state.models = response.models;
      picker.innerHTML = "";
      for (const model of response.models) {
        const option = document.createElement("option");
        option.value = model.model_id;
        option.textContent = model.display_name;
        picker.appendChild(option);
      }
      if (response.models.length > 0) {
        picker.selectedIndex = 0; // first entry preselected
      }
      banner.hidden = true;
    } catch {
      showBanner("The backend is unreachable.");
    }
  }

  function attachImage(file: File): boolean {
    uploadError.hidden = true;
    if (!SUPPORTED_IMAGE_TYPES.includes(file.type)) {
      uploadError.textContent = `Unsupported file type ${file.type || "(unknown)"}; use PNG or JPEG.`;
      uploadError.hidden = false;
      return false;
    }
    if (file.size > maxUploadBytes) {
      const limitMb = Math.round(maxUploadBytes / (1024 * 1024));
      uploadError.textContent = `Image is too large (limit ${limitMb} MiB).`;
      uploadError.hidden = false;
      return false;
    }
    state.attachedImage = file;
    uploadPreview.textContent = `Attached: ${file.name} (${Math.ceil(file.size / 1024)} KiB)`;
    uploadPreview.hidden = false;
    return true;
  }

  function clearAttachment(): void {
    state.attachedImage = null;
    uploadPreview.hidden = true;
    uploadPreview.textContent = "";
    fileInput.value = "";
  }

  function appendUserMessage(text: string, hadImage: boolean): void {
    const bubble = el("div", "message user");
    if (text) bubble.appendChild(el("p", undefined, text));
    if (hadImage) bubble.appendChild(el("div", "image-note", "📷 image attached"));
    messages.appendChild(bubble);
  }

  function appendErrorMessage(text: string): void {
    messages.appendChild(el("div", "message error", text));
  }

  async function send(textOverride?: string): Promise<void> {
    if (state.pending) return;
    const text = (textOverride ?? input.value).trim();
    const image = state.attachedImage ?? undefined;
    if (!text && !image) return;
    setPending(true);
    start.hidden = true;
    try {
      if (state.sessionId === null) {
        const created = await client.createSession(picker.value);
        state.sessionId = created.session_id;
      }
      appendUserMessage(text, image !== undefined);
      const typing = el("div", "message assistant typing", "…");
      messages.appendChild(typing);
      try {
        const reply = await client.sendMessage(state.sessionId, text, image);
        messages.removeChild(typing);
        messages.appendChild(renderReply(reply, imageBase));
      } catch (error) {
        messages.removeChild(typing);
        throw error;
      }
      input.value = "";
      clearAttachment();
    } catch (error) {
      if (error instanceof ApiError) {
        appendErrorMessage(`Request failed (${error.kind}): ${error.message}`);
      } else {
        appendErrorMessage("The backend is unreachable; please try again.");
        showBanner("The backend is unreachable.");
      }
    } finally {
      setPending(false);
    }
  }

  retryButton.addEventListener("click", () => void refreshModels());
  composer.addEventListener("submit", (event) => {
    event.preventDefault();
    void send();
  });
  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (file) attachImage(file);
  });

  void refreshModels();
  return { state, refreshModels, attachImage, send };
}
