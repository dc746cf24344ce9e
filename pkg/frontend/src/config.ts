/**
 * Robot character configuration: types, defaults, and the local mirror of
 * the server's published validation rules. The server remains the
 * authority; this duplicate exists only so forms can block obviously
 * invalid submissions before a round-trip.
 */

export interface InteractionModes {
  text_enabled: boolean;
  push_to_talk_enabled: boolean;
  proactive_enabled: boolean;
}

export interface RobotConfig {
  avatar_id: string;
  language: string;
  modes: InteractionModes;
  llm_model: string;
  system_prompt: string;
  voice_gender: "female" | "male" | "neutral";
}

export const AVATAR_PRESETS = ["robot-blue", "robot-orange", "humanoid-gray", "abstract-orb"] as const;
export const VOICE_GENDERS = ["female", "male", "neutral"] as const;
export const SYSTEM_PROMPT_MAX_CHARS = 8000;

// Structural language-tag check, simplified: primary subtag plus optional
// well-shaped subtags. The server applies the full grammar.
const LANGUAGE_SHAPE = /^(?:x(?:-[0-9a-z]{1,8})+|[a-z]{2,8}(?:-[0-9a-z]{1,8})*)$/i;

export function defaultConfig(): RobotConfig {
  return {
    avatar_id: "robot-blue",
    language: "en-US",
    modes: { text_enabled: true, push_to_talk_enabled: false, proactive_enabled: false },
    llm_model: "echo",
    system_prompt: "",
    voice_gender: "neutral",
  };
}

export function validateConfigLocally(config: RobotConfig): string[] {
  const problems: string[] = [];
  if (!AVATAR_PRESETS.includes(config.avatar_id as (typeof AVATAR_PRESETS)[number])) {
    problems.push(`avatar_id: unknown preset ${config.avatar_id}`);
  }
  if (!LANGUAGE_SHAPE.test(config.language)) {
    problems.push(`language: ${config.language} is not a plausible language tag`);
  }
  const m = config.modes;
  if (!m.text_enabled && !m.push_to_talk_enabled && !m.proactive_enabled) {
    problems.push("no interaction mode enabled");
  }
  if (!config.llm_model) {
    problems.push("llm_model: must be nonempty");
  }
  if (config.system_prompt.length > SYSTEM_PROMPT_MAX_CHARS) {
    problems.push(`system_prompt: ${config.system_prompt.length} characters exceeds the ${SYSTEM_PROMPT_MAX_CHARS} cap`);
  }
  if (!VOICE_GENDERS.includes(config.voice_gender)) {
    problems.push("voice_gender: must be female, male, or neutral");
  }
  return problems;
}
