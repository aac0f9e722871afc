"""
Prompt templates for LLM pseudo-captioning.
"""

import json
from typing import Optional, Sequence

from .exceptions import ContractError
from .models import CaptionTally

LDCPS_PREAMBLE = "\n".join(
    [
        "You are an advanced language model tasked with generating a ",
        "concise and accurate caption for an object. You are given a list of ",
        "captions along with their frequencies. Each caption may ",
        "represent a different viewpoint and might not always be accurate. ",
        "Additionally, you are provided with the correct object class to ",
        "describe. Your goal is to generate a single, coherent caption that ",
        "accurately describes the main object, based on the provided ",
        "information. The generated caption should not exceed 20 words ",
        "and must be encapsulated within <Caption> ... </Caption> ",
        "tags.",
        "Here is the format of the input you will receive:",
        '[[frequency, "caption"]]',
    ]
)

LDCPS_EXAMPLES = "\n".join(
    [
        "Example Input:",
        '[[5, "A red apple on a table"], [3, "A shiny red apple"], [1, "A red fruit"], [2, "A red apple"]]',
        "Example Output:",
        "<Caption>A shiny red apple on a table</Caption>",
        "Example Input:",
        '[[8, "A small brown dog"], [3, "A dog"], [4, "A small dog"], [1, "A brown animal"]]',
        "Example Output:",
        "<Caption>A small brown dog</Caption>",
        "Example Input:",
        '[[6, "A blue car parked on the street"], [4, "A car"], [2, "A blue vehicle"], [1, "A car on the street"]]',
        "Example Output:",
        "<Caption>A blue car parked on the street</Caption>",
        "Example Input:",
        '[[7, "A cat sitting on a windowsill"], [5, "A windowsill cat"], [2, "A cat"], [1, "A windowsill"]]',
        "Example Output:",
        "<Caption>A cat sitting on a windowsill</Caption>",
        "Example Input:",
        '[[5, "A wooden table with a plate on it"], [2, "A table with a plate and a couch in the room"], ',
        '[3, "A wooden table"], [1, "A plate on a wooden table"]]',
        "Example Output:",
        "<Caption>A wooden table with a plate on it</Caption>",
    ]
)

LDCPS_TASK = "\n".join(
    [
        "Your Task:",
        "1. Analyze the provided list of captions and their frequencies.",
        "2. Synthesize an accurate caption that reflects the most reliable and frequent details.",
        "3. Ensure the generated caption describes only the main objects and mentions other objects "
        "only in relation to the main object.",
        "4. Ensure the generated caption is no longer than 20 words.",
        "5. Encapsulate your generated caption within <Caption> ... </Caption> tags.",
    ]
)

IC3_TEMPLATE = (
    "This is a hard problem. Carefully summarize in ONE detailed sentence the following captions "
    "by different (possibly incorrect) people describing the same object. Be sure to describe "
    "everything, and leave out details you are not sure about.\n"
    "Captions:\n"
    "{captions}\n"
    "Encapsulate the summary within <Caption> ... </Caption> tags.\n"
    "Summary:"
)


def serialize_tally(tally: CaptionTally) -> str:
    """``[[f1, "c1"], [f2, "c2"], ...]`` with JSON string escaping."""
    return json.dumps([[freq, text] for freq, text in tally.entries])


def build_ldcps_prompt(tally: CaptionTally, object_class: Optional[str] = None) -> str:
    """
    Frequency-aware pseudo-captioning prompt with in-context examples.

    Args:
        tally: Caption frequencies of one object
        object_class: Class line added before the input block when given

    Returns:
        Prompt text ending with ``Output:``

    Raises:
        ContractError: If the tally is empty
    """
    if not tally.entries:
        raise ContractError("Cannot build a prompt for an empty tally")
    parts = [LDCPS_PREAMBLE, "", LDCPS_EXAMPLES, "", LDCPS_TASK, ""]
    if object_class:
        parts.extend([f"Object class: {object_class}", ""])
    parts.extend(["Input:", serialize_tally(tally), "", "Output:"])
    return "\n".join(parts)


def parse_prompt_input(prompt: str) -> CaptionTally:
    """Recover the tally from the ``Input:`` block of an LD-CPS prompt."""
    block = prompt.rsplit("\nInput:\n", 1)[1].split("\n\nOutput:", 1)[0]
    return CaptionTally([(int(f), str(c)) for f, c in json.loads(block)])


def build_ic3_prompt(captions: Sequence[str]) -> str:
    """Summarization prompt over the raw caption list, without frequencies."""
    if not captions:
        raise ContractError("Cannot build a prompt without captions")
    return IC3_TEMPLATE.format(captions="\n".join(f"- {c}" for c in captions))
