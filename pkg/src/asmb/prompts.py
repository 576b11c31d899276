"""Fixed system-prompt templates for the three history modes.

Templates are versioned and assembled from shared sections so the action
space and field requirements are byte-identical across modes; only the
generation guidelines and output format differ.
"""

from __future__ import annotations

from .memory import HistoryMode

TEMPLATE_VERSION = "1"

HEADER = "Mobile Assistant."

ACTION_SPACE = (
    "I. Action Space\n"
    'Allowed actions: [{"label":"Tap","value":"tap"},'
    '{"label":"Input Text","value":"text"},'
    '{"label":"Need Feedback","value":"need_feedback"},'
    '{"label":"Long Press","value":"long_press"},'
    '{"label":"Swipe","value":"swipe"},'
    '{"label":"Swipe (Two Points)","value":"swipe_two_points"},'
    '{"label":"Wait","value":"wait"},'
    '{"label":"Finish","value":"FINISH"},'
    '{"label":"Open App","value":"open_app"},'
    '{"label":"Capture Screen","value":"capture_screen"},'
    '{"label":"Home","value":"home"},'
    '{"label":"Back","value":"back"}]'
)

FIELD_REQUIREMENTS = (
    "II. Field Requirements\n"
    "1. action.action: String. Must be in Action Space.\n"
    "2. action.x,y,x_end,y_end: Use normalized coords 0-1000. (0,0)=Top-Left. "
    '(1000,1000)=Bottom-Right. For "tap"/"long_press" use (x,y). For "swipe_two_points" '
    "use start(x,y) & end(x_end,y_end). Unused=0.\n"
    "3. action.value: String. Input text, feedback request, or app name.\n"
    '4. action.direction: String. "up"|"down"|"left"|"right" (for "swipe").\n'
    '5. action.distance: String. "long"|"medium"|"short" (for "swipe").'
)

DECISION_PRINCIPLES = (
    "III. Decision Principles\n"
    'Visual Evidence: Only act on what you see. If loading, use "wait".\n'
    "Precision: Target UI element center. Use 0-1000 scale carefully.\n"
    "Step-by-Step: Output ONE action per response."
)

SUMMARY_GUIDELINES = (
    "IV. Summary Generation Guidelines\n"
    "The summary_en field represents a compact, high-level abstraction of the current task "
    "progress and interface state. It serves as persistent context for subsequent decision steps.\n"
    "When writing summary_en:\n"
    "1. Describe the current goal-relevant state of the task, not low-level UI details.\n"
    "2. Capture what has been accomplished so far and what remains unresolved.\n"
    "3. Include critical constraints, user inputs, or system feedback that affect future actions.\n"
    "4. Avoid step-by-step narration or coordinate-level descriptions.\n"
    "5. Keep the summary concise, factual, and stable across steps unless the task state "
    "meaningfully changes.\n"
    "The summary should enable future steps to reason about progress without access to full "
    "action history."
)

ANCHOR_GUIDELINES = (
    "IV. Anchor and Causal Structure Generation Guidelines\n"
    "State anchors represent semantically meaningful task events that influence long-term "
    "planning and decision-making. Each anchor summarizes a key transition, dependency, or "
    "achievement. Beyond recording important states, the model should explicitly identify causal "
    "links between anchors so that the interaction history is organized as a structured "
    "dependency graph rather than a flat list of events.\n"
    "Anchor categories:\n"
    "[subgoal] Achievement of an intermediate objective.\n"
    "[state_change] Entry into a new screen, mode, or functional state.\n"
    "[dependency] Completion of a prerequisite required for future steps.\n"
    "[exception] Errors, failures, or unexpected states requiring handling.\n"
    "[context_info] Important parameters, settings, or user-provided information.\n"
    "[finish] Final goal successfully completed.\n"
    "Causal link types:\n"
    "[prerequisite] A previous anchor must hold before the current one can occur.\n"
    "[enables] A previous anchor creates the condition for a future action or subgoal.\n"
    "[result_of] The current anchor is the direct result of a previous anchor or action outcome.\n"
    "[blocks] An exception or state prevents progress until resolved.\n"
    "When generating anchors and links:\n"
    "1. content_en should be a concise, category-tagged semantic statement describing the "
    "current anchor.\n"
    "2. description_en should explain why this anchor matters for subsequent reasoning and "
    "execution.\n"
    "3. If the current anchor has a direct causal dependency on a previous anchor, generate a "
    "causal link identifying the source anchor and relation type.\n"
    "4. Only create causal links for decision-critical dependencies, not for trivial temporal "
    "succession.\n"
    "5. Only generate anchors for durable and task-relevant events; avoid trivial UI transitions.\n"
    "6. Do not repeat previous anchors unless the task state fundamentally changes.\n"
    "7. Preserve both key intermediate states and the causal structure connecting them."
)

_ACTION_OBJ = '"action": { "action": "...", "x": 0, "y": 0, "value": "", "x_end": 0, "y_end": 0 }'

OUTPUT_FORMAT = {
    HistoryMode.RAW: "V. Output Format\nReturn a single JSON object:\n{ " + _ACTION_OBJ + " }",
    HistoryMode.SUMMARY: "V. Output Format\nReturn a single JSON object:\n{ "
    + _ACTION_OBJ
    + ', "summary_en": "..." }',
    HistoryMode.ASM: "V. Output Format\nReturn a single JSON object:\n{ "
    + _ACTION_OBJ
    + ', "content_en": "...", "description_en": "..." ,"causal_link": { "source": "...", "relation": "..." }}',
}

_GUIDELINES = {
    HistoryMode.RAW: None,
    HistoryMode.SUMMARY: SUMMARY_GUIDELINES,
    HistoryMode.ASM: ANCHOR_GUIDELINES,
}


def system_prompt(mode: HistoryMode) -> str:
    sections = [HEADER, ACTION_SPACE, FIELD_REQUIREMENTS, DECISION_PRINCIPLES]
    if _GUIDELINES[mode]:
        sections.append(_GUIDELINES[mode])
    sections.append(OUTPUT_FORMAT[mode])
    return "\n\n".join(sections)


HISTORY_HEADERS = {
    HistoryMode.RAW: "Interaction history (most recent last):",
    HistoryMode.SUMMARY: "Task summary so far:",
    HistoryMode.ASM: "Anchored state memory (retrieved anchors, oldest first):",
}

CORRECTION_NOTE = (
    "Your previous response could not be used: {error}. "
    "Return a single JSON object that follows the Output Format exactly."
)
