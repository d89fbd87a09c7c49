/** Page wiring: one or two chat panes against a configurable service URL.
 *
 * The dual-pane mode sends the same utterance to both panes, each with its
 * own decode settings, which makes the MAP-vs-sample contrast directly
 * observable in one screen.
 */

import { Client } from "./api.js";
import { ChatPane } from "./pane.js";
import { PaneView } from "./view.js";

function serviceUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("service") ?? "http://127.0.0.1:8000";
}

async function boot(): Promise<void> {
  const client = new Client(serviceUrl());
  const info = await client.modelInfo();
  document.querySelector("#model-info")!.textContent =
    `${info.variant} (d_h=${info.dims.d_h}, ctx=${info.dims.d_ctx}, ` +
    `d_e=${info.dims.d_e}), |V|=${info.vocab_size}`;

  const left = new ChatPane(client, { mode: "map", beam_width: 5 });
  const right = new ChatPane(client, { mode: "sample", temperature: 1.0, seed: 0 });
  new PaneView(document.querySelector("#pane-left")!, left, "pane A");
  new PaneView(document.querySelector("#pane-right")!, right, "pane B");
  await left.start();
  await right.start();

  const mirrorForm = document.querySelector<HTMLFormElement>("#mirror")!;
  const mirrorInput = mirrorForm.querySelector("input")!;
  mirrorForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = mirrorInput.value;
    mirrorInput.value = "";
    void left.send(text);
    void right.send(text);
  });
}

void boot().catch((err) => {
  document.querySelector("#model-info")!.textContent =
    `cannot reach service: ${err instanceof Error ? err.message : err}`;
});
