/** Robot screen entry point (?server=...&session=<id>). */

import { GatewayApi } from "./api.js";
import { ContextPlayer, MicrophoneSource, browserRecognizerFactory, browserWsFactory } from "./browser.js";
import { RobotApp } from "./robot/screen.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("server") ?? window.location.origin;
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const app = new RobotApp(root, {
  doc: document,
  api: new GatewayApi(baseUrl),
  baseUrl,
  wsFactory: browserWsFactory,
  audioSource: new MicrophoneSource(),
  recognizerFactory: browserRecognizerFactory(),
  player: new ContextPlayer(),
});

const sessionId = params.get("session");
if (sessionId) void app.join(sessionId);
