/** Rendering helpers. The accuracy shown is always the server's number. */

import type { QaReport } from "./api.js";

export function formatPercent2(value: number | null): string {
  if (value === null || Number.isNaN(value)) {
    return "n/a";
  }
  return `${(value * 100).toFixed(2)}%`;
}

export function reportSummary(report: QaReport): string {
  const overall = formatPercent2(report.overall);
  const scope = report.partial ? `${report.judged_sentences}/${report.total_sentences} judged` : "complete";
  return `${overall} (${scope})`;
}

export function pieceLabel(text: string, max = 42): string {
  const squashed = text.replace(/\s+/g, " ").trim();
  return squashed.length <= max ? squashed : squashed.slice(0, max - 1) + "…";
}
