/** Contract tests: recorded /v1 responses must render the expected cards,
 * counts, and order. The fixtures were captured from the real backend over
 * the deterministic fixture corpus.
 */

import { describe, expect, it } from "vitest";

import { renderReply, renderSegments } from "../src/cards.js";
import type { AgentReplyPayload } from "../src/types.js";

import replyTwoRecords from "./fixtures/reply_two_records.json";
import replyCollection from "./fixtures/reply_collection.json";
import replyMarkdownOnly from "./fixtures/reply_markdown_only.json";
import replyUnknownKind from "./fixtures/reply_unknown_kind.json";
import history from "./fixtures/history.json";

describe("renderReply on recorded fixtures", () => {
  it("renders two record cards in reply order", () => {
    const payload = replyTwoRecords as AgentReplyPayload;
    const node = renderReply(payload);
    const cards = node.querySelectorAll(".card");
    expect(cards).toHaveLength(2);
    const expectedIds = payload.segments
      .filter((s) => s.kind === "record")
      .map((s) => (s as { record: { murag_id: string } }).record.murag_id);
    expect([...cards].map((c) => (c as HTMLElement).dataset.muragId)).toEqual(expectedIds);
    const first = cards[0] as HTMLElement;
    expect(first.querySelector(".card-title")?.textContent).toBeTruthy();
    const img = first.querySelector("img") as HTMLImageElement;
    expect(img.src).toContain("/v1/images/");
    expect(first.querySelectorAll(".card-details tr").length).toBeGreaterThan(0);
  });

  it("renders text before and after the cards in source order", () => {
    const node = renderReply(replyTwoRecords as AgentReplyPayload);
    const children = [...node.children[0]!.parentElement!.querySelectorAll(":scope > *")];
    // structure: markdown text, two record cards, trailing markdown text
    const kinds = [...node.childNodes].map((child) =>
      (child as HTMLElement).classList.contains("markdown") ? "text" : "card",
    );
    expect(kinds).toEqual(["text", "card", "card", "text"]);
    expect(children.length).toBeGreaterThan(0);
  });

  it("renders a collection card with title, description and contacts", () => {
    const payload = replyCollection as AgentReplyPayload;
    const node = renderReply(payload);
    const cards = node.querySelectorAll(".collection-card");
    expect(cards).toHaveLength(1);
    const card = cards[0] as HTMLElement;
    const collection = (payload.segments.find((s) => s.kind === "collection") as {
      collection: { title: string; description: string; record_count: number };
    }).collection;
    expect(card.querySelector(".card-title")?.textContent).toBe(collection.title);
    expect(card.querySelector(".card-description")?.textContent).toBe(
      collection.description,
    );
    expect(card.querySelector(".card-subtitle")?.textContent).toContain(
      String(collection.record_count),
    );
    expect(card.querySelectorAll(".card-contact").length).toBeGreaterThan(0);
  });

  it("renders markdown-only replies without cards", () => {
    const node = renderReply(replyMarkdownOnly as AgentReplyPayload);
    expect(node.querySelectorAll(".card")).toHaveLength(0);
    expect(node.querySelector("h2")?.textContent).toBe("No cards here");
    expect(node.querySelector("em")?.textContent).toBe("markdown");
    expect(node.querySelector("code")?.textContent).toBe("code");
  });

  it("degrades unknown segment kinds to a placeholder card with the raw payload", () => {
    const node = renderReply(replyUnknownKind as AgentReplyPayload);
    const placeholder = node.querySelectorAll(".placeholder-card");
    expect(placeholder).toHaveLength(1);
    const raw = placeholder[0]!.querySelector(".card-raw")?.textContent ?? "";
    expect(raw).toContain('"hologram"');
    expect(raw).toContain('"goose"');
  });

  it("never shows raw render-tag text to the user", () => {
    for (const payload of [replyTwoRecords, replyCollection, replyMarkdownOnly]) {
      const node = renderReply(payload as AgentReplyPayload);
      expect(node.textContent).not.toContain("<FundusRecord");
      expect(node.textContent).not.toContain("<FundusCollection");
      expect(node.textContent).not.toContain("murag_id='");
    }
  });

  it("renders recorded history turns with resolved segments", () => {
    const assistantTurns = (history as { turns: { role: string; segments?: unknown[] }[] })
      .turns.filter((t) => t.role === "assistant");
    expect(assistantTurns.length).toBeGreaterThan(0);
    const withCards = assistantTurns[0]!;
    const fragment = renderSegments(withCards.segments as never);
    const holder = document.createElement("div");
    holder.appendChild(fragment);
    expect(holder.querySelectorAll(".record-card")).toHaveLength(2);
  });
});
