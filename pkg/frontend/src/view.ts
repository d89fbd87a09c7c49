/** DOM rendering for a chat pane.
 *
 * Everything the user or the model produced goes through textContent;
 * the only markup this module creates is its own fixed skeleton.
 */

import { ChatPane } from "./pane.js";

const LABELS: Record<string, string> = {
  user: "you",
  model: "model",
  error: "error",
  notice: "notice",
};

export class PaneView {
  private readonly log: HTMLElement;
  private readonly form: HTMLFormElement;
  private readonly input: HTMLInputElement;
  private readonly sendButton: HTMLButtonElement;
  private readonly controlsError: HTMLElement;
  readonly controls: {
    mode: HTMLSelectElement;
    beamWidth: HTMLInputElement;
    temperature: HTMLInputElement;
    seed: HTMLInputElement;
  };

  constructor(
    readonly root: HTMLElement,
    readonly pane: ChatPane,
    title: string,
  ) {
    root.classList.add("pane");
    root.innerHTML = `
      <h2></h2>
      <div class="controls">
        <label>mode
          <select name="mode">
            <option value="map">MAP (beam)</option>
            <option value="sample">sample</option>
          </select>
        </label>
        <label>beam <input name="beam" type="number" value="5" min="1" step="1"></label>
        <label>temp <input name="temperature" type="number" value="1.0" step="0.1"></label>
        <label>seed <input name="seed" type="number" value="0" step="1"></label>
        <span class="controls-error" role="alert"></span>
      </div>
      <ol class="log" aria-live="polite"></ol>
      <form class="composer">
        <input name="utterance" type="text" autocomplete="off" placeholder="say something">
        <button type="submit">send</button>
      </form>
    `;
    root.querySelector("h2")!.textContent = title;
    this.log = root.querySelector(".log")!;
    this.form = root.querySelector("form")!;
    this.input = root.querySelector("input[name=utterance]")!;
    this.sendButton = root.querySelector("button")!;
    this.controlsError = root.querySelector(".controls-error")!;
    this.controls = {
      mode: root.querySelector("select[name=mode]")!,
      beamWidth: root.querySelector("input[name=beam]")!,
      temperature: root.querySelector("input[name=temperature]")!,
      seed: root.querySelector("input[name=seed]")!,
    };
    this.syncControls();

    this.form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const text = this.input.value;
      this.input.value = "";
      void this.pane.send(text);
    });
    for (const el of Object.values(this.controls)) {
      el.addEventListener("change", () => this.applyControls());
    }
    pane.onChange(() => this.render());
    this.render();
  }

  /** Push widget values into the pane; rejected values snap back. */
  private applyControls(): void {
    const ok = this.pane.configure({
      mode: this.controls.mode.value,
      beam_width: Number(this.controls.beamWidth.value),
      temperature: Number(this.controls.temperature.value),
      seed: Number(this.controls.seed.value),
    });
    if (!ok) this.syncControls();
  }

  /** Widgets always show the settings the next turn will use. */
  private syncControls(): void {
    this.controls.mode.value = this.pane.settings.mode;
    this.controls.beamWidth.value = String(this.pane.settings.beam_width);
    this.controls.temperature.value = String(this.pane.settings.temperature);
    this.controls.seed.value = String(this.pane.settings.seed);
  }

  render(): void {
    this.syncControls();
    this.controlsError.textContent = this.pane.lastValidationError ?? "";
    this.input.disabled = this.pane.busy;
    this.sendButton.disabled = this.pane.busy;
    this.log.replaceChildren(
      ...this.pane.transcript.map((entry) => {
        const li = document.createElement("li");
        li.className = `entry entry-${entry.kind}`;
        const speaker = document.createElement("span");
        speaker.className = "speaker";
        speaker.textContent = LABELS[entry.kind];
        const body = document.createElement("span");
        body.className = "text";
        body.textContent = entry.text;
        li.append(speaker, body);
        if (entry.logProb !== undefined) {
          const score = document.createElement("span");
          score.className = "logprob";
          score.textContent = String(entry.logProb);
          li.append(score);
        }
        if (entry.retry) {
          const button = document.createElement("button");
          button.type = "button";
          button.className = "retry";
          button.textContent = "retry";
          button.addEventListener("click", () => void entry.retry!());
          li.append(button);
        }
        if (entry.newSession) {
          const button = document.createElement("button");
          button.type = "button";
          button.className = "new-session";
          button.textContent = "new session";
          button.addEventListener("click", () => void entry.newSession!());
          li.append(button);
        }
        return li;
      }),
    );
  }
}
