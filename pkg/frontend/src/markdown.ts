// Allowlist markdown renderer for moderator messages.
//
// Safety comes from construction, not from filtering: every character of
// input is HTML-escaped first, and the only tags that can appear in the
// output are the ones this module itself emits (headings, emphasis, lists,
// blockquote, paragraphs, inline code). Raw HTML, links, and images in the
// input therefore render as inert text.

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => ESCAPES[ch]);
}

function renderInline(escaped: string): string {
  return escaped
    .replace(/`([^`]+)`/g, "<code>$1</code>")
    .replace(/\*\*([^*]+)\*\*/g, "<strong>$1</strong>")
    .replace(/__([^_]+)__/g, "<strong>$1</strong>")
    .replace(/\*([^*]+)\*/g, "<em>$1</em>")
    .replace(/_([^_]+)_/g, "<em>$1</em>");
}

type Block =
  | { kind: "heading"; level: number; text: string }
  | { kind: "list"; ordered: boolean; items: string[] }
  | { kind: "blockquote"; lines: string[] }
  | { kind: "paragraph"; lines: string[] };

function parseBlocks(markdown: string): Block[] {
  const blocks: Block[] = [];
  let current: Block | null = null;

  const flush = () => {
    if (current !== null) {
      blocks.push(current);
      current = null;
    }
  };

  for (const rawLine of markdown.split(/\r?\n/)) {
    const line = rawLine.trimEnd();
    if (line.trim() === "") {
      flush();
      continue;
    }
    const heading = /^(#{1,6})\s+(.*)$/.exec(line.trim());
    if (heading) {
      flush();
      blocks.push({
        kind: "heading",
        level: heading[1].length,
        text: heading[2],
      });
      continue;
    }
    const quote = /^>\s?(.*)$/.exec(line.trim());
    if (quote) {
      if (current?.kind !== "blockquote") {
        flush();
        current = { kind: "blockquote", lines: [] };
      }
      current.lines.push(quote[1]);
      continue;
    }
    const bullet = /^[-*]\s+(.*)$/.exec(line.trim());
    const numbered = /^\d+\.\s+(.*)$/.exec(line.trim());
    if (bullet || numbered) {
      const ordered = !bullet;
      if (current?.kind !== "list" || current.ordered !== ordered) {
        flush();
        current = { kind: "list", ordered, items: [] };
      }
      current.items.push((bullet ?? numbered)![1]);
      continue;
    }
    if (current?.kind !== "paragraph") {
      flush();
      current = { kind: "paragraph", lines: [] };
    }
    current.lines.push(line.trim());
  }
  flush();
  return blocks;
}

/** Render markdown to a sanitized HTML string. */
export function renderMarkdown(markdown: string): string {
  const parts: string[] = [];
  for (const block of parseBlocks(markdown)) {
    switch (block.kind) {
      case "heading": {
        const tag = `h${block.level}`;
        parts.push(`<${tag}>${renderInline(escapeHtml(block.text))}</${tag}>`);
        break;
      }
      case "list": {
        const tag = block.ordered ? "ol" : "ul";
        const items = block.items
          .map((item) => `<li>${renderInline(escapeHtml(item))}</li>`)
          .join("");
        parts.push(`<${tag}>${items}</${tag}>`);
        break;
      }
      case "blockquote": {
        const body = block.lines
          .map((line) => renderInline(escapeHtml(line)))
          .join("<br>");
        parts.push(`<blockquote>${body}</blockquote>`);
        break;
      }
      case "paragraph": {
        const body = block.lines
          .map((line) => renderInline(escapeHtml(line)))
          .join("<br>");
        parts.push(`<p>${body}</p>`);
        break;
      }
    }
  }
  return parts.join("\n");
}
