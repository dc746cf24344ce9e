"""Independent oracle for prompt assembly: recomputes the history window
by slicing the raw message list at user-message boundaries. Kept separate
from (and structurally unlike) the implementation it checks."""

from __future__ import annotations

import random

from srw.model import ChatMessage


def oracle_prompt(system_prompt: str, history: list[ChatMessage], user_text: str, window_turns: int = 20):
    user_starts = [i for i, m in enumerate(history) if m.author == "user"]
    kept = history[user_starts[-window_turns]:] if len(user_starts) > window_turns else list(history)
    out = [{"role": "system", "content": system_prompt}] if system_prompt else []
    out += [{"role": "user" if m.author == "user" else "assistant", "content": m.text} for m in kept]
    out.append({"role": "user", "content": user_text})
    return out


def random_history(
    rng: random.Random, n_turns: int, session_id: str = "gentle-lynx-001", allow_failed: bool = True
) -> list[ChatMessage]:
    """n_turns turns; with allow_failed some turns have no robot reply."""
    messages: list[ChatMessage] = []
    index = 0
    for k in range(n_turns):
        messages.append(
            ChatMessage(
                id=f"u{k}",
                session_id=session_id,
                turn_index=index,
                author="user",
                text=f"question {k} / {rng.randrange(10**6)}",
                created_at=1723200000000 + index,
                modality=rng.choice(["text", "voice_button", "voice_wake"]),
            )
        )
        index += 1
        if not (allow_failed and rng.random() < 0.1):
            messages.append(
                ChatMessage(
                    id=f"r{k}",
                    session_id=session_id,
                    turn_index=index,
                    author="robot",
                    text=f"answer {k} / {rng.randrange(10**6)}",
                    created_at=1723200000000 + index,
                    in_reply_to=f"u{k}",
                    llm_model_used="echo",
                    config_version_used=1,
                    latency_ms={"llm": 1, "tts": 1},
                )
            )
            index += 1
    return messages
