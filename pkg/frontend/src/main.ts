/**
 * Single-page review client. Keyboard-first: the reviewer walks pieces with
 * j/k, judges with a/x, splits with s (at the text-selection point when one
 * is inside the piece), merges with m, and jumps to the next unjudged piece
 * with n or space. Every mutation round-trips through the revision-checked
 * API; a 409 refreshes the view from the server and flags the lost input.
 */

import { ApiError, ConflictError, ReviewApi } from "./api.js";
import type { QaReport, SessionSnapshot, Verdict } from "./api.js";
import { formatPercent2, pieceLabel, reportSummary } from "./format.js";
import {
  SessionView,
  clampCursor,
  makeView,
  nextUnjudged,
  progress,
  replaceSnapshot,
  stepCursor,
} from "./state.js";

const api = new ReviewApi("");

let view: SessionView | null = null;
let report: QaReport | null = null;
let zoom = 1;
let panX = 0;
let panY = 0;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function setNotice(text: string | null, kind: "info" | "warn" = "info"): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = text ?? "";
  banner.className = text ? `banner ${kind}` : "banner hidden";
}

function setOffline(offline: boolean): void {
  if (view) {
    view = { ...view, offline };
  }
  document.body.classList.toggle("offline", offline);
  if (offline) {
    setNotice("API unreachable; inputs disabled. Press r to reconnect.", "warn");
  }
}

async function refresh(sessionId: string): Promise<void> {
  const snapshot = await api.getSession(sessionId);
  view = view && view.snapshot.session_id === sessionId
    ? replaceSnapshot(view, snapshot)
    : makeView(snapshot);
  report = await api.getReport(sessionId, true);
  render();
}

async function guarded(action: () => Promise<void>): Promise<void> {
  if (!view || view.offline) {
    return;
  }
  try {
    await action();
    setNotice(null);
  } catch (err) {
    if (err instanceof ConflictError) {
      await refresh(view.snapshot.session_id);
      setNotice("Someone else changed the session; refreshed. Your last keystroke was not applied.", "warn");
    } else if (err instanceof ApiError) {
      setNotice(err.message, "warn");
    } else {
      setOffline(true);
    }
  }
}

async function judge(verdict: Verdict): Promise<void> {
  await guarded(async () => {
    if (!view) {
      return;
    }
    const { sentence, piece } = view.cursor;
    const revision = await api.verdict(
      view.snapshot.session_id, sentence, piece, verdict, view.snapshot.revision,
    );
    const snapshot = await api.getSession(view.snapshot.session_id);
    if (snapshot.revision !== revision) {
      // someone raced us between ack and refetch; their state wins
      setNotice("Session advanced concurrently; showing latest server state.", "warn");
    }
    view = replaceSnapshot(view, snapshot);
    const following = nextUnjudged(snapshot, view.cursor);
    if (following) {
      view = { ...view, cursor: following };
    }
    report = await api.getReport(snapshot.session_id, true);
    render();
  });
}

function selectionOffsetWithin(target: HTMLElement): number | null {
  const selection = window.getSelection();
  if (!selection || selection.rangeCount === 0 || !selection.anchorNode) {
    return null;
  }
  if (!target.contains(selection.anchorNode)) {
    return null;
  }
  const offset = selection.anchorOffset;
  return offset > 0 ? offset : null;
}

async function splitCurrent(): Promise<void> {
  await guarded(async () => {
    if (!view) {
      return;
    }
    const { sentence, piece } = view.cursor;
    const pieceText = view.snapshot.sentences[sentence].pieces[piece].text;
    const chip = document.querySelector<HTMLElement>(".piece.cursor .piece-text");
    const offset = (chip && selectionOffsetWithin(chip)) ?? Math.floor(pieceText.length / 2);
    if (offset <= 0 || offset >= pieceText.length) {
      return;
    }
    await api.splitPiece(view.snapshot.session_id, sentence, piece, offset, view.snapshot.revision);
    view = replaceSnapshot(view, await api.getSession(view.snapshot.session_id));
    report = await api.getReport(view.snapshot.session_id, true);
    render();
  });
}

async function mergeCurrent(): Promise<void> {
  await guarded(async () => {
    if (!view) {
      return;
    }
    const { sentence, piece } = view.cursor;
    await api.mergePiece(view.snapshot.session_id, sentence, piece, view.snapshot.revision);
    view = replaceSnapshot(view, await api.getSession(view.snapshot.session_id));
    report = await api.getReport(view.snapshot.session_id, true);
    render();
  });
}

function moveCursor(delta: 1 | -1): void {
  if (!view) {
    return;
  }
  view = { ...view, cursor: stepCursor(view.snapshot, view.cursor, delta) };
  render();
}

function jumpNextUnjudged(): void {
  if (!view) {
    return;
  }
  const target = nextUnjudged(view.snapshot, view.cursor);
  if (target) {
    view = { ...view, cursor: target };
    render();
  } else {
    setNotice("All pieces are judged.", "info");
  }
}

function renderImagePane(snapshot: SessionSnapshot): void {
  const pairIndex = snapshot.sentences[view!.cursor.sentence]?.pair ?? 0;
  const pair = snapshot.pairs[pairIndex];
  const img = el<HTMLImageElement>("scene");
  const fallback = el<HTMLDivElement>("scene-fallback");
  img.style.transform = `translate(${panX}px, ${panY}px) scale(${zoom})`;
  const url = api.imageUrl(snapshot.session_id, pairIndex);
  if (img.dataset.pair !== String(pairIndex)) {
    img.dataset.pair = String(pairIndex);
    zoom = 1;
    panX = 0;
    panY = 0;
    img.style.transform = "";
    img.src = url;
    img.classList.remove("hidden");
    fallback.classList.add("hidden");
    img.onerror = () => {
      img.classList.add("hidden");
      fallback.classList.remove("hidden");
      fallback.textContent = `no image bytes for ${pair?.uri || pair?.image_id || "pair"}`;
    };
  }
  el<HTMLDivElement>("pair-meta").textContent =
    `pair ${pairIndex + 1}/${snapshot.pairs.length} · ${pair?.image_id ?? ""}`;
}

function renderSentences(snapshot: SessionSnapshot): void {
  const list = el<HTMLOListElement>("sentences");
  list.textContent = "";
  snapshot.sentences.forEach((sentence, si) => {
    const item = document.createElement("li");
    item.className = `sentence ${sentence.category ?? "open"}`;
    if (si === view!.cursor.sentence) {
      item.classList.add("active");
    }
    const text = document.createElement("div");
    text.className = "sentence-text";
    text.textContent = sentence.text;
    item.appendChild(text);
    const chips = document.createElement("div");
    chips.className = "chips";
    sentence.pieces.forEach((piece, pi) => {
      const chip = document.createElement("span");
      chip.className = `piece ${piece.verdict}`;
      if (si === view!.cursor.sentence && pi === view!.cursor.piece) {
        chip.classList.add("cursor");
      }
      const label = document.createElement("span");
      label.className = "piece-text";
      label.textContent = pieceLabel(piece.text);
      chip.appendChild(label);
      chip.addEventListener("click", () => {
        view = { ...view!, cursor: clampCursor(snapshot, { sentence: si, piece: pi }) };
        render();
      });
      chips.appendChild(chip);
    });
    item.appendChild(chips);
    list.appendChild(item);
  });
  const active = list.querySelector<HTMLElement>(".sentence.active");
  active?.scrollIntoView({ block: "nearest" });
}

function renderReportPanel(): void {
  const panel = el<HTMLDivElement>("report");
  if (!report) {
    panel.textContent = "report unavailable";
    return;
  }
  // the number shown is the server's; the client only formats it
  el<HTMLSpanElement>("overall").textContent = formatPercent2(report.overall);
  el<HTMLSpanElement>("report-detail").textContent = reportSummary(report);
  el<HTMLSpanElement>("cat-counts").textContent =
    `CA ${report.ca} · CI ${report.ci} · PA ${report.pa} (piece acc ${formatPercent2(report.piece_accuracy)})`;
}

function render(): void {
  if (!view) {
    return;
  }
  const snapshot = view.snapshot;
  el<HTMLHeadingElement>("session-title").textContent = snapshot.session_id;
  const { judged, total } = progress(snapshot);
  const bar = el<HTMLDivElement>("progress-fill");
  bar.style.width = total ? `${(100 * judged) / total}%` : "0%";
  el<HTMLSpanElement>("progress-label").textContent =
    `${judged}/${total} pieces · rev ${snapshot.revision}${snapshot.complete ? " · complete" : ""}`;
  document.body.classList.toggle("complete", snapshot.complete);
  renderImagePane(snapshot);
  renderSentences(snapshot);
  renderReportPanel();
}

function bindKeyboard(): void {
  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) {
      return;
    }
    if (view?.offline) {
      if (event.key === "r") {
        setOffline(false);
        void guarded(() => refresh(view!.snapshot.session_id));
      }
      return;
    }
    const actions: Record<string, () => void> = {
      a: () => void judge("accurate"),
      "1": () => void judge("accurate"),
      x: () => void judge("inaccurate"),
      "2": () => void judge("inaccurate"),
      u: () => void judge("unjudged"),
      s: () => void splitCurrent(),
      m: () => void mergeCurrent(),
      j: () => moveCursor(1),
      ArrowDown: () => moveCursor(1),
      k: () => moveCursor(-1),
      ArrowUp: () => moveCursor(-1),
      n: () => jumpNextUnjudged(),
      " ": () => jumpNextUnjudged(),
    };
    const action = actions[event.key];
    if (action) {
      event.preventDefault();
      action();
    }
  });
}

function bindImagePane(): void {
  const frame = el<HTMLDivElement>("scene-frame");
  const img = el<HTMLImageElement>("scene");
  frame.addEventListener("wheel", (event) => {
    event.preventDefault();
    zoom = Math.min(8, Math.max(0.25, zoom * (event.deltaY < 0 ? 1.15 : 1 / 1.15)));
    img.style.transform = `translate(${panX}px, ${panY}px) scale(${zoom})`;
  }, { passive: false });
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  frame.addEventListener("pointerdown", (event) => {
    dragging = true;
    lastX = event.clientX;
    lastY = event.clientY;
    frame.setPointerCapture(event.pointerId);
  });
  frame.addEventListener("pointermove", (event) => {
    if (!dragging) {
      return;
    }
    panX += event.clientX - lastX;
    panY += event.clientY - lastY;
    lastX = event.clientX;
    lastY = event.clientY;
    img.style.transform = `translate(${panX}px, ${panY}px) scale(${zoom})`;
  });
  frame.addEventListener("pointerup", () => {
    dragging = false;
  });
}

async function boot(): Promise<void> {
  bindKeyboard();
  bindImagePane();
  try {
    const sessions = await api.listSessions();
    if (sessions.length === 0) {
      setNotice("No sessions in the store. Create one with `rsinstruct qa init`.", "warn");
      return;
    }
    const fromHash = window.location.hash.replace(/^#/, "");
    const chosen = sessions.find((s) => s.session_id === fromHash) ?? sessions[0];
    const picker = el<HTMLSelectElement>("session-picker");
    picker.textContent = "";
    sessions.forEach((s) => {
      const option = document.createElement("option");
      option.value = s.session_id;
      option.textContent = `${s.session_id} (${s.sentences} sentences)`;
      option.selected = s.session_id === chosen.session_id;
      picker.appendChild(option);
    });
    picker.addEventListener("change", () => {
      window.location.hash = picker.value;
      void guarded(() => refresh(picker.value));
    });
    await refresh(chosen.session_id);
  } catch {
    setOffline(true);
  }
}

void boot();
