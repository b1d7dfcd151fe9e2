/** Annotation session: one image at a time, keyboard-first labeling.
 *
 * Keys 1-7 submit the seven emotion labels in code order, 0 flags the image
 * irrelevant. Every POST corresponds to exactly one explicit user action:
 * inputs are disabled while a submission is in flight (double presses are
 * dropped), a network failure shows a non-destructive retry banner, and a
 * 404 (image removed server-side) skips forward with a notice. The service
 * log is the source of truth; the UI keeps no local persistence.
 */

import { ApiClient, ApiError, NextItem } from "./api.js";
import { EMOTION_LABELS, IRRELEVANT, Verdict, verdictForKey } from "./labels.js";

export class AnnotationApp {
  private annotator = "";
  private current: NextItem | null = null;
  private busy = false;
  private lastVerdict: Verdict | null = null;
  private inflight: Promise<void> | null = null;

  private startForm!: HTMLFormElement;
  private annotatorInput!: HTMLInputElement;
  private labelView!: HTMLElement;
  private completeView!: HTMLElement;
  private imageEl!: HTMLImageElement;
  private progressEl!: HTMLElement;
  private statusEl!: HTMLElement;
  private errorBanner!: HTMLElement;
  private errorMessage!: HTMLElement;
  private retryButton!: HTMLButtonElement;
  private buttons: HTMLButtonElement[] = [];

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  mount(): void {
    this.root.innerHTML = `
      <form id="start-form">
        <label>Annotator id
          <input id="annotator-input" autocomplete="off" placeholder="your id" />
        </label>
        <button type="submit">Start</button>
      </form>
      <section id="label-view" hidden>
        <img id="current-image" alt="image to annotate" />
        <div id="progress"></div>
        <div id="status"></div>
        <div id="error-banner" hidden>
          <span id="error-message"></span>
          <button id="retry-button" type="button">Retry</button>
        </div>
        <div id="verdict-buttons"></div>
      </section>
      <section id="complete-view" hidden>Queue complete. Thank you!</section>
    `;
    const byId = <T extends HTMLElement>(id: string) =>
      this.root.querySelector<T>(`#${id}`)!;
    this.startForm = byId<HTMLFormElement>("start-form");
    this.annotatorInput = byId<HTMLInputElement>("annotator-input");
    this.labelView = byId("label-view");
    this.completeView = byId("complete-view");
    this.imageEl = byId<HTMLImageElement>("current-image");
    this.progressEl = byId("progress");
    this.statusEl = byId("status");
    this.errorBanner = byId("error-banner");
    this.errorMessage = byId("error-message");
    this.retryButton = byId<HTMLButtonElement>("retry-button");

    const buttonBox = byId("verdict-buttons");
    const entries: Array<[string, Verdict]> = EMOTION_LABELS.map(
      (label, i) => [`${i + 1}`, label] as [string, Verdict],
    );
    entries.push(["0", IRRELEVANT]);
    for (const [key, verdict] of entries) {
      const button = this.root.ownerDocument.createElement("button");
      button.type = "button";
      button.dataset.verdict = verdict;
      button.textContent = `${key} · ${verdict}`;
      button.addEventListener("click", () => this.requestSubmit(verdict));
      buttonBox.appendChild(button);
      this.buttons.push(button);
    }

    this.startForm.addEventListener("submit", (event) => {
      event.preventDefault();
      const id = this.annotatorInput.value.trim();
      if (!id) {
        this.annotatorInput.focus();
        return;
      }
      this.start(id);
    });
    this.retryButton.addEventListener("click", () => {
      if (this.lastVerdict !== null) {
        this.requestSubmit(this.lastVerdict);
      }
    });
    this.root.ownerDocument.addEventListener("keydown", (event) => {
      if (!this.annotator) {
        return;
      }
      const verdict = verdictForKey(event.key);
      if (verdict !== null) {
        this.requestSubmit(verdict);
      }
    });
  }

  /** Awaitable quiescence point (used by tests). */
  async whenIdle(): Promise<void> {
    while (this.inflight !== null) {
      await this.inflight;
    }
  }

  start(annotator: string): void {
    this.annotator = annotator;
    this.startForm.hidden = true;
    this.labelView.hidden = false;
    this.track(this.loadNext());
  }

  private track(task: Promise<void>): void {
    const wrapped = task.finally(() => {
      if (this.inflight === wrapped) {
        this.inflight = null;
      }
    });
    this.inflight = wrapped;
  }

  private requestSubmit(verdict: Verdict): void {
    // guard: no image on screen, or a submission already in flight
    if (this.busy || this.current === null || this.current.image_id === null) {
      return;
    }
    this.busy = true;
    this.setButtonsEnabled(false);
    this.track(this.submit(verdict));
  }

  private async submit(verdict: Verdict): Promise<void> {
    const item = this.current!;
    this.lastVerdict = verdict;
    try {
      const ack = await this.api.annotate(item.image_id!, this.annotator, verdict);
      this.hideError();
      this.statusEl.textContent = `saved ${verdict} for ${item.image_id}`;
      this.renderProgress(ack.progress);
      await this.loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.statusEl.textContent = `${item.image_id} is gone on the server; skipped`;
        this.hideError();
        await this.loadNext();
        return;
      }
      this.errorMessage.textContent =
        err instanceof Error ? err.message : String(err);
      this.errorBanner.hidden = false;
      this.busy = false;
      this.setButtonsEnabled(true);
    }
  }

  private async loadNext(): Promise<void> {
    try {
      const item = await this.api.next(this.annotator);
      this.current = item;
      this.hideError();
      this.renderProgress(item.progress);
      if (item.image_id === null) {
        this.labelView.hidden = true;
        this.completeView.hidden = false;
        this.busy = true; // nothing left to submit
        return;
      }
      this.imageEl.src = item.image_url ?? "";
      this.imageEl.dataset.imageId = item.image_id;
      this.busy = false;
      this.setButtonsEnabled(true);
    } catch (err) {
      this.errorMessage.textContent =
        err instanceof Error ? err.message : String(err);
      this.errorBanner.hidden = false;
      this.busy = false;
      this.setButtonsEnabled(true);
    }
  }

  private renderProgress(progress: { done: number; total: number }): void {
    this.progressEl.textContent = `${progress.done} / ${progress.total}`;
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const button of this.buttons) {
      button.disabled = !enabled;
    }
  }

  private hideError(): void {
    this.errorBanner.hidden = true;
    this.errorMessage.textContent = "";
  }
}
