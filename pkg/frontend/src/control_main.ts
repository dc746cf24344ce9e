/** Control panel entry point: mount against the gateway named in the URL
 * (?server=http://host:port, default same origin). */

import { GatewayApi } from "./api.js";
import { browserWsFactory } from "./browser.js";
import { PanelApp } from "./control/panel.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("server") ?? window.location.origin;
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

new PanelApp(root, {
  doc: document,
  api: new GatewayApi(baseUrl),
  baseUrl,
  wsFactory: browserWsFactory,
});
