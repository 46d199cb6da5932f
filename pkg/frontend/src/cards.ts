/** Entity cards and reply rendering.
 *
 * A reply arrives as ordered segments: markdown text interleaved with
 * record/collection payloads where the agent placed render tags. Cards are
 * rendered at their segment position, in source order. Unknown segment
 * kinds degrade to a placeholder card showing the raw payload.
 */

import { renderMarkdown } from "./markdown.js";
import type {
  AgentReplyPayload,
  CollectionCard,
  RecordCard,
  Segment,
} from "./types.js";

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

export function renderRecordCard(card: RecordCard, imageBase = ""): HTMLElement {
  const root = el("article", "card record-card");
  root.dataset.kind = "record";
  root.dataset.muragId = card.murag_id;

  const image = el("img", "card-image");
  image.src = imageBase + card.image_url;
  image.alt = card.title;
  root.appendChild(image);

  const body = el("div", "card-body");
  body.appendChild(el("h3", "card-title", card.title));
  body.appendChild(el("div", "card-subtitle", `${card.catalogno} · ${card.collection_title}`));

  const table = el("table", "card-details");
  for (const [key, value] of Object.entries(card.details)) {
    const row = el("tr");
    row.appendChild(el("th", undefined, key));
    row.appendChild(el("td", undefined, value));
    table.appendChild(row);
  }
  body.appendChild(table);
  root.appendChild(body);
  return root;
}

export function renderCollectionCard(card: CollectionCard): HTMLElement {
  const root = el("article", "card collection-card");
  root.dataset.kind = "collection";
  root.dataset.muragId = card.murag_id;

  const body = el("div", "card-body");
  body.appendChild(el("h3", "card-title", card.title));
  body.appendChild(
    el("div", "card-subtitle", `${card.record_count} records · ${card.collection_name}`),
  );
  body.appendChild(el("p", "card-description", card.description));
  if (card.contacts.length) {
    const contacts = el("div", "card-contacts");
    for (const contact of card.contacts) {
      contacts.appendChild(el("div", "card-contact", `${contact.name} <${contact.email}>`));
    }
    body.appendChild(contacts);
  }
  root.appendChild(body);
  return root;
}

export function renderPlaceholderCard(segment: Segment): HTMLElement {
  const root = el("article", "card placeholder-card");
  root.dataset.kind = "placeholder";
  root.appendChild(el("h3", "card-title", `Unsupported content (${segment.kind})`));
  const raw = el("pre", "card-raw");
  raw.textContent = JSON.stringify(segment, null, 2);
  root.appendChild(raw);
  return root;
}

export function renderSegments(segments: Segment[], imageBase = ""): DocumentFragment {
  const fragment = document.createDocumentFragment();
  for (const segment of segments) {
    if (segment.kind === "text" && typeof (segment as { text?: unknown }).text === "string") {
      const text = (segment as { text: string }).text;
      if (text.trim() === "") continue;
      const block = el("div", "markdown");
      block.innerHTML = renderMarkdown(text);
      fragment.appendChild(block);
    } else if (segment.kind === "record" && "record" in segment) {
      fragment.appendChild(
        renderRecordCard((segment as { record: RecordCard }).record, imageBase),
      );
    } else if (segment.kind === "collection" && "collection" in segment) {
      fragment.appendChild(
        renderCollectionCard((segment as { collection: CollectionCard }).collection),
      );
    } else {
      fragment.appendChild(renderPlaceholderCard(segment));
    }
  }
  return fragment;
}

export function renderReply(payload: AgentReplyPayload, imageBase = ""): HTMLElement {
  const root = el("div", "message assistant");
  root.dataset.stopReason = payload.stop_reason;
  root.appendChild(renderSegments(payload.segments, imageBase));
  return root;
}
