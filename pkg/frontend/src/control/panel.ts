/**
 * The operator's control panel: create or join a session, edit the robot
 * character live with optimistic concurrency, watch status heartbeats and
 * the running transcript.
 *
 * The panel is a pure protocol client: every business rule lives server
 * side, and the local checks here duplicate only the published validation
 * rules so forms can fail fast.
 */

import { GatewayApi, SessionInfo } from "../api.js";
import {
  AVATAR_PRESETS,
  RobotConfig,
  SYSTEM_PROMPT_MAX_CHARS,
  VOICE_GENDERS,
  defaultConfig,
  validateConfigLocally,
} from "../config.js";
import { byId, clear, h } from "../dom.js";
import type { Envelope, HeartbeatPayload, RobotReplyPayload } from "../protocol.js";
import { ChannelClient, ConnectionState, WsFactory } from "../socket.js";

export const DEFAULT_HEARTBEAT_MS = 5000;
export const STALE_AFTER_FACTOR = 2;

export interface PanelDeps {
  doc: Document;
  api: GatewayApi;
  baseUrl: string;
  wsFactory: WsFactory;
  now?: () => number;
  heartbeatMs?: number;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancelScheduled?: (handle: unknown) => void;
}

interface TranscriptRow {
  author: "user" | "robot";
  text: string;
  latency?: { stt?: number; llm: number; tts: number };
}

export class PanelApp {
  session: SessionInfo | null = null;
  draft: RobotConfig = defaultConfig();
  confirmedVersion = 0;
  lastHeartbeat: { payload: HeartbeatPayload; at: number } | null = null;
  connection: ConnectionState = "disconnected";
  transcript: TranscriptRow[] = [];
  conflict = false;
  closedReason: string | null = null;

  private channel: ChannelClient | null = null;
  private staleTimer: unknown = null;

  constructor(
    private root: HTMLElement,
    private deps: PanelDeps,
  ) {
    this.renderSessionForm();
  }

  private get doc(): Document {
    return this.deps.doc;
  }

  private now(): number {
    return (this.deps.now ?? Date.now)();
  }

  // -- session form ------------------------------------------------------

  private renderSessionForm(): void {
    const doc = this.doc;
    clear(this.root);
    const form = h(doc, "div", { id: "create-form", class: "panel-form" });

    const avatar = h(doc, "select", { id: "avatar" }) as HTMLSelectElement;
    for (const preset of AVATAR_PRESETS) {
      avatar.append(h(doc, "option", { value: preset }, preset));
    }
    const gender = h(doc, "select", { id: "gender" }) as HTMLSelectElement;
    for (const value of VOICE_GENDERS) {
      gender.append(h(doc, "option", { value }, value));
    }
    (gender as HTMLSelectElement).value = "neutral";

    form.append(
      h(doc, "h2", {}, "New session"),
      labeled(doc, "Avatar", avatar),
      labeled(doc, "Language", h(doc, "input", { id: "language", value: "en-US" })),
      h(
        doc,
        "fieldset",
        { id: "modes" },
        checkbox(doc, "mode-text", "Text input", true),
        checkbox(doc, "mode-ptt", "Push-to-talk", false),
        checkbox(doc, "mode-proactive", "Wake word (proactive)", false),
      ),
      labeled(doc, "Model", h(doc, "input", { id: "model", value: "echo" })),
      labeled(doc, "Role prompt", h(doc, "textarea", { id: "prompt", rows: "4" })),
      h(doc, "div", { id: "prompt-counter" }, `0 / ${SYSTEM_PROMPT_MAX_CHARS}`),
      labeled(doc, "Voice gender", gender),
      h(doc, "button", { id: "create-btn" }, "Create session"),
      h(doc, "ul", { id: "form-errors" }),
      h(doc, "h2", {}, "Or join an existing session"),
      h(doc, "input", { id: "join-id", placeholder: "brave-otter-042" }),
      h(doc, "button", { id: "join-btn" }, "Join"),
    );
    this.root.append(form);

    const prompt = byId<HTMLTextAreaElement>(this.root, "prompt");
    prompt.addEventListener("input", () => this.updatePromptCounter("create-btn"));
    byId(this.root, "create-btn").addEventListener("click", () => void this.submitCreate());
    byId(this.root, "join-btn").addEventListener("click", () => {
      const id = byId<HTMLInputElement>(this.root, "join-id").value.trim();
      if (id) void this.joinSession(id);
    });
  }

  private updatePromptCounter(buttonId: string): void {
    const prompt = byId<HTMLTextAreaElement>(this.root, "prompt").value;
    const counter = byId(this.root, "prompt-counter");
    counter.textContent = `${prompt.length} / ${SYSTEM_PROMPT_MAX_CHARS}`;
    const over = prompt.length > SYSTEM_PROMPT_MAX_CHARS;
    counter.classList.toggle("over", over);
    (byId(this.root, buttonId) as HTMLButtonElement).disabled = over;
  }

  private configFromForm(): RobotConfig {
    return {
      avatar_id: byId<HTMLSelectElement>(this.root, "avatar").value,
      language: byId<HTMLInputElement>(this.root, "language").value.trim(),
      modes: {
        text_enabled: byId<HTMLInputElement>(this.root, "mode-text").checked,
        push_to_talk_enabled: byId<HTMLInputElement>(this.root, "mode-ptt").checked,
        proactive_enabled: byId<HTMLInputElement>(this.root, "mode-proactive").checked,
      },
      llm_model: byId<HTMLInputElement>(this.root, "model").value.trim(),
      system_prompt: byId<HTMLTextAreaElement>(this.root, "prompt").value,
      voice_gender: byId<HTMLSelectElement>(this.root, "gender").value as RobotConfig["voice_gender"],
    };
  }

  async submitCreate(): Promise<void> {
    const config = this.configFromForm();
    const problems = validateConfigLocally(config);
    const errors = byId(this.root, "form-errors");
    clear(errors);
    if (problems.length > 0) {
      for (const p of problems) errors.append(h(this.doc, "li", { class: "error" }, p));
      return;
    }
    try {
      const session = await this.deps.api.createSession(config);
      this.enterSession(session);
    } catch (err) {
      errors.append(h(this.doc, "li", { class: "error" }, String(err)));
    }
  }

  async joinSession(sessionId: string): Promise<void> {
    const errors = byId(this.root, "form-errors");
    clear(errors);
    try {
      const session = await this.deps.api.getSession(sessionId);
      this.enterSession(session);
    } catch (err) {
      errors.append(h(this.doc, "li", { class: "error" }, String(err)));
    }
  }

  // -- live session view ----------------------------------------------------

  private enterSession(session: SessionInfo): void {
    this.session = session;
    this.draft = structuredClone(session.config);
    this.confirmedVersion = session.config_version;
    this.transcript = [];
    this.renderLiveView();
    this.connectChannel();
    this.startStaleChecker();
  }

  private renderLiveView(): void {
    const doc = this.doc;
    clear(this.root);
    const session = this.session!;

    const avatar = h(doc, "select", { id: "avatar" }) as HTMLSelectElement;
    for (const preset of AVATAR_PRESETS) avatar.append(h(doc, "option", { value: preset }, preset));
    avatar.value = this.draft.avatar_id;
    const gender = h(doc, "select", { id: "gender" }) as HTMLSelectElement;
    for (const value of VOICE_GENDERS) gender.append(h(doc, "option", { value }, value));
    gender.value = this.draft.voice_gender;

    this.root.append(
      h(
        doc,
        "header",
        {},
        h(doc, "h1", { id: "session-id" }, session.id),
        h(doc, "span", { id: "version-badge", class: "badge" }, `v${this.confirmedVersion}`),
        h(doc, "span", { id: "connection-label" }, this.connection),
        h(doc, "span", { id: "stale-indicator", class: "hidden" }, "status stale"),
      ),
      h(
        doc,
        "section",
        { id: "status" },
        h(doc, "span", { id: "robot-light", class: "light off" }, "robot"),
        h(doc, "span", { id: "control-light", class: "light off" }, "control"),
        h(doc, "span", { id: "phase-label" }, "idle"),
      ),
      h(
        doc,
        "section",
        { id: "editor" },
        labeled(doc, "Avatar", avatar),
        labeled(doc, "Language", h(doc, "input", { id: "language", value: this.draft.language })),
        h(
          doc,
          "fieldset",
          { id: "modes" },
          checkbox(doc, "mode-text", "Text input", this.draft.modes.text_enabled),
          checkbox(doc, "mode-ptt", "Push-to-talk", this.draft.modes.push_to_talk_enabled),
          checkbox(doc, "mode-proactive", "Wake word (proactive)", this.draft.modes.proactive_enabled),
        ),
        labeled(doc, "Model", h(doc, "input", { id: "model", value: this.draft.llm_model })),
        labeled(doc, "Role prompt", h(doc, "textarea", { id: "prompt", rows: "4" }, this.draft.system_prompt)),
        h(doc, "div", { id: "prompt-counter" }, `${this.draft.system_prompt.length} / ${SYSTEM_PROMPT_MAX_CHARS}`),
        labeled(doc, "Voice gender", gender),
        h(doc, "button", { id: "apply-btn" }, "Apply config"),
        h(doc, "ul", { id: "form-errors" }),
        h(
          doc,
          "div",
          { id: "conflict-banner", class: "hidden" },
          "Someone else changed the config. ",
          h(doc, "button", { id: "conflict-reload" }, "Reload latest"),
        ),
      ),
      h(doc, "section", {}, h(doc, "h2", {}, "Transcript"), h(doc, "ol", { id: "transcript" })),
      h(doc, "ul", { id: "event-log" }),
    );

    byId(this.root, "prompt").addEventListener("input", () => this.updatePromptCounter("apply-btn"));
    byId(this.root, "apply-btn").addEventListener("click", () => void this.applyDraft());
    byId(this.root, "conflict-reload").addEventListener("click", () => void this.reloadFromServer());
  }

  /** PATCH the edited config with the confirmed version; on conflict show
   * the banner and leave the draft untouched for re-apply. */
  async applyDraft(): Promise<void> {
    if (!this.session) return;
    this.draft = this.configFromForm();
    const problems = validateConfigLocally(this.draft);
    const errors = byId(this.root, "form-errors");
    clear(errors);
    if (problems.length > 0) {
      for (const p of problems) errors.append(h(this.doc, "li", { class: "error" }, p));
      return;
    }
    const result = await this.deps.api.patchConfig(this.session.id, this.draft, this.confirmedVersion);
    if (result.ok) {
      this.confirmedVersion = result.version;
      this.conflict = false;
      this.refreshBadges();
    } else if (result.code === "version_conflict") {
      this.conflict = true;
      byId(this.root, "conflict-banner").classList.remove("hidden");
    } else {
      errors.append(h(this.doc, "li", { class: "error" }, `${result.code}: ${result.message}`));
    }
  }

  async reloadFromServer(): Promise<void> {
    if (!this.session) return;
    const session = await this.deps.api.getSession(this.session.id);
    this.session = session;
    this.confirmedVersion = session.config_version;
    this.draft = structuredClone(session.config);
    this.conflict = false;
    this.renderLiveView();
    this.refreshBadges();
  }

  // -- live envelope handling --------------------------------------------------

  private connectChannel(): void {
    this.channel?.close();
    this.channel = new ChannelClient({
      baseUrl: this.deps.baseUrl,
      sessionId: this.session!.id,
      channel: "control",
      wsFactory: this.deps.wsFactory,
      onEnvelope: (env) => this.handleEnvelope(env),
      onState: (state) => {
        this.connection = state;
        const label = this.root.querySelector("#connection-label");
        if (label) label.textContent = this.closedReason ? `closed (${this.closedReason})` : state;
      },
      onConnected: () => void this.resync(),
      schedule: this.deps.schedule,
    });
    this.channel.connect();
  }

  /** Re-sync confirmed state and transcript after (re)connecting. */
  private async resync(): Promise<void> {
    if (!this.session) return;
    try {
      const session = await this.deps.api.getSession(this.session.id);
      this.session = session;
      this.confirmedVersion = session.config_version;
      const lines = await this.deps.api.transcriptLines(session.id);
      const records = lines.slice(1).map((line) => JSON.parse(line));
      records.sort((a, b) => a.turn_index - b.turn_index);
      this.transcript = records.map((r) => ({
        author: r.author,
        text: r.text,
        latency: r.latency_ms,
      }));
      this.renderTranscript();
      this.refreshBadges();
    } catch {
      /* transient; reconnect loop will try again */
    }
  }

  handleEnvelope(env: Envelope): void {
    switch (env.type) {
      case "heartbeat": {
        const payload = env.payload as unknown as HeartbeatPayload;
        this.lastHeartbeat = { payload, at: this.now() };
        this.confirmedVersion = payload.config_version;
        this.refreshBadges();
        break;
      }
      case "user_text": {
        this.transcript.push({ author: "user", text: String(env.payload.text) });
        this.renderTranscript();
        break;
      }
      case "robot_reply": {
        const payload = env.payload as unknown as RobotReplyPayload;
        this.transcript.push({ author: "robot", text: payload.text, latency: payload.latency_ms });
        this.renderTranscript();
        break;
      }
      case "config_update": {
        this.confirmedVersion = env.payload.config_version as number;
        this.refreshBadges();
        break;
      }
      case "session_closed": {
        this.closedReason = String(env.payload.reason);
        const label = this.root.querySelector("#connection-label");
        if (label) label.textContent = `closed (${this.closedReason})`;
        const apply = this.root.querySelector("#apply-btn") as HTMLButtonElement | null;
        if (apply) apply.disabled = true;
        break;
      }
      case "error": {
        const log = this.root.querySelector("#event-log");
        if (log) {
          log.append(
            h(this.doc, "li", { class: "error" }, `${env.payload.code}: ${env.payload.message}`),
          );
        }
        break;
      }
      default:
        break;
    }
  }

  private refreshBadges(): void {
    const badge = this.root.querySelector("#version-badge");
    if (badge) badge.textContent = `v${this.confirmedVersion}`;
    if (this.lastHeartbeat) {
      const { payload } = this.lastHeartbeat;
      const robotLight = this.root.querySelector("#robot-light");
      const controlLight = this.root.querySelector("#control-light");
      const phase = this.root.querySelector("#phase-label");
      robotLight?.classList.toggle("on", payload.robot_connected);
      robotLight?.classList.toggle("off", !payload.robot_connected);
      controlLight?.classList.toggle("on", payload.control_connected);
      controlLight?.classList.toggle("off", !payload.control_connected);
      if (phase) phase.textContent = payload.robot_state.phase;
    }
  }

  private renderTranscript(): void {
    const list = this.root.querySelector("#transcript");
    if (!list) return;
    clear(list);
    for (const row of this.transcript) {
      const item = h(this.doc, "li", { class: `row ${row.author}` }, `${row.author}: ${row.text}`);
      if (row.latency) {
        const chips = h(this.doc, "span", { class: "latency" });
        for (const stage of ["stt", "llm", "tts"] as const) {
          const value = row.latency[stage];
          if (value !== undefined) {
            chips.append(h(this.doc, "span", { class: `chip ${stage}` }, `${stage} ${value}ms`));
          }
        }
        item.append(chips);
      }
      list.append(item);
    }
  }

  // -- staleness ------------------------------------------------------------------

  private startStaleChecker(): void {
    const schedule = this.deps.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    const period = this.deps.heartbeatMs ?? DEFAULT_HEARTBEAT_MS;
    const tick = () => {
      this.checkStale(period);
      this.staleTimer = schedule(tick, 1000);
    };
    this.staleTimer = schedule(tick, 1000);
  }

  checkStale(periodMs: number = this.deps.heartbeatMs ?? DEFAULT_HEARTBEAT_MS): boolean {
    const indicator = this.root.querySelector("#stale-indicator");
    const stale =
      this.lastHeartbeat !== null && this.now() - this.lastHeartbeat.at > STALE_AFTER_FACTOR * periodMs;
    indicator?.classList.toggle("hidden", !stale);
    return stale;
  }

  dispose(): void {
    this.channel?.close();
    if (this.staleTimer !== null) {
      const cancel = this.deps.cancelScheduled ?? ((handle) => clearTimeout(handle as number));
      cancel(this.staleTimer);
      this.staleTimer = null;
    }
  }
}

function labeled(doc: Document, text: string, control: HTMLElement): HTMLElement {
  return h(doc, "label", {}, `${text}: `, control);
}

function checkbox(doc: Document, id: string, text: string, checked: boolean): HTMLElement {
  const input = h(doc, "input", { id, type: "checkbox" }) as HTMLInputElement;
  input.checked = checked;
  return h(doc, "label", { class: "mode" }, input, ` ${text}`);
}
