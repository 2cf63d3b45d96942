"""Question template tables, provider prompts, and conformance checks.

Each task draws its question from a fixed template table; placeholders in
square brackets ([bbox], [region], [class]) are substituted at generation
time. ``question_conforms`` verifies the reverse direction: a generated
question must match exactly one template after substitution, which the test
suite sweeps over whole corpora.
"""

from __future__ import annotations

import re

# task tags (closed set)
TASKS = ("detection", "coarse_cls", "fine_cls", "grounding", "counting_regress",
         "counting_choice", "image_caption", "region_caption", "vqa")

IMAGE_CAPTION_TEMPLATES = (
    "Write a description for the image.",
    "Offer a concise description of the image.",
    "Give a description of the scene.",
    "Give a short description of the image.",
    "Provide a brief description of the image.",
    "Please give a succinct description of what is shown in this image.",
    "Could you describe the image briefly?",
    "Could you provide a description of the image?",
    "Can you give a brief description of this image?",
    "Could you provide a short overview of the image?",
)

REGION_CAPTION_TEMPLATES = (
    "Please provide a concise description of this region [bbox] in this underwater image.",
    "Please give a brief description of the region [bbox] in this underwater image.",
    "Could you provide a concise description of the region [bbox] in this underwater image?",
    "Please offer a succinct description of the region [bbox].",
    "Please provide a short yet informative description of the region [bbox].",
    "Describe this region [bbox] in the underwater image.",
    "Briefly describe the content of this region [bbox].",
    "In this underwater image, please provide a concise description of the region [bbox].",
    "For this underwater image, concisely describe the content of the region [bbox].",
    "What's in this region [bbox] of the underwater image? Describe it concisely.",
)

GROUNDING_TEMPLATES = (
    "Please locate the bounding box coordinates of the [region].",
    "Find and return the bounding box coordinates of the [region].",
    "Give the bounding box coordinates for the [region].",
    "Extract the precise bounding box coordinates that correspond to the given [region].",
    "Detect and outline the bounding box coordinates enclosing the [region].",
)

DETECTION_SINGLE_TEMPLATE = "Detect all [class] object in the image."
DETECTION_MULTI_TEMPLATE = "Detect all underwater object in the image, including [classes]."

COUNTING_TEMPLATES = (
    "How many fish can you find in this image?",
    "Please count the fish in the image.",
    "Identify the number of fish present in this image.",
    "Count the total number of fish visible in this image.",
    "What is the count of fish in this image?",
    "How many fish can you see in this image?",
    "How many fish are visible in this image?",
    "Please count how many fish are in this image.",
    "Can you determine the number of fish in this image?",
    "What is the total number of fish shown in this image?",
)

COARSE_CLS_TEMPLATES = (
    "Identify the object inside the specified regression box [bbox].",
    "Categorize the object located within the provided regression box [bbox] in the underwater image.",
    "Classify the items found inside the given regression box [bbox].",
    "Determine the category of the object inside the specified regression box [bbox].",
    "Assign a category to the object inside the provided regression box [bbox] in the image.",
)

FINE_CLS_TEMPLATES = (
    "Please identify the biological class of fish depicted in the image.",
    "Can you recognize the fish taxonomic class shown in this image?",
    "Could you determine the taxonomic class of the fish in the image?",
    "What is the biological class of the fish in the image?",
    "You are requested to identify the biological class of fish present in the image.",
)

# default closed vocabulary for fine-grained fish classification (the eight
# taxonomic classes of the source detection corpus); callers may override
FISH_TAXONOMY = (
    "Actinopterygii",
    "Chondrichthyes",
    "Cephalaspidomorphi",
    "Dipneusti",
    "Elasmobranchii",
    "Holocephali",
    "Myxini",
    "Sarcopterygii",
)

# arithmetic-sequence intervals for single-choice counting
COUNT_INTERVALS = (5, 50, 100)
CHOICE_LETTERS = "ABCD"

PROMPT_IMAGE_CAPTION = """\
You are an AI visual assistant analyzing an underwater image.

Task Overview:

Generate a detailed and accurate description of the image in one sentence.

Image caption guidelines:

1. Ensure that **each description is affirmative and can be inferred clearly from the image**.

2. Identify the main targets such as various fish, sea turtles, jellyfish and other marine organisms, shipwrecks and ruins, coral reefs, seagrass, divers, etc. When describing, mention the accurate number of targets and determine their category.

3. Consider the action or state of the objects, relationship between objects, background and environment.
"""

PROMPT_REGION_CAPTION = """\
Given an image, a bounding box (bbox), and additional textual context, generate a high-quality region description. The description must adhere to the following principles:

Input:

bounding box: {bbox}

This bounding box represents the normalized xy-coordinates of the top-left and bottom-right corners of the target region in the image.

Accuracy: Ensure the description precisely reflects the content within the specified bbox without adding speculative or unrelated details.

Specificity: Provide concrete details about the object's attributes (e.g., shape, color, texture) and relevant contextual information.

Objectivity: Avoid any subjective interpretations, emotions, or assumptions about the object's purpose or intent.

Conciseness: Keep the description informative yet succinct, avoiding unnecessary elaboration.

Context Awareness: Consider the surrounding elements only if they are relevant to understanding the object in the bbox.

Output Format:

description: A dark-colored fish with a broad body and a slightly pointed head, swimming near the coral reef.
"""

PROMPT_VQA = """\
You are an AI visual assistant analyzing an underwater image. Generate a structured dialogue between yourself and a person asking questions about the image. Your task is to create precise question-answer pairs based purely on the observable visual content of the image. Each answer should be as short as possible, preferably a single word or short phrase, while maintaining accuracy.

Task Overview:
Generate a variety of structured question-answer pairs that reflect the image's content. Questions should cover different aspects of the image and fall into one of the following categories:
Object Recognition Questions: Identifying or detecting object types and categories (e.g., fish species, coral structures).
Attribute Questions: Describing the properties of objects (e.g., color, size, shape, material).
Counting Questions: Asking about the number of specific objects (e.g., number of fish or coral formations).
Spatial Relation Questions: Asking about the relative position or spatial layout of objects (e.g., where objects are located or their relative positions ).

Guidelines:
For "Spatial Relation Questions",do not answer them by "In the ocean".
Ensure that every question has a definite and clear answer based on what is visually observable in the image.
Avoid speculative or ambiguous questions. Questions should be answerable with confidence and based on visible content.
Include both simple (object identification, counting) and moderate (relative positioning, behaviors) questions.

Format:
Follow this exact format for each question-answer pair and no need to include other content:
Q: [Question]
A: [A single word or phrase]
"""

# regex fragments for substituted placeholders
_BBOX_PATTERN = r"\[\d+\.\d{3}, \d+\.\d{3}, \d+\.\d{3}, \d+\.\d{3}\]"
_TEXT_PATTERN = r".+?"
_OPTIONS_SUFFIX = re.compile(r" A\. \d+  B\. \d+  C\. \d+  D\. \d+$")


def _template_regex(template: str) -> re.Pattern:
    out = re.escape(template)
    out = out.replace(re.escape("[bbox]"), _BBOX_PATTERN)
    out = out.replace(re.escape("[region]"), _TEXT_PATTERN)
    out = out.replace(re.escape("[classes]"), _TEXT_PATTERN)
    out = out.replace(re.escape("[class]"), _TEXT_PATTERN)
    return re.compile(out)


_TASK_TEMPLATES = {
    "image_caption": IMAGE_CAPTION_TEMPLATES,
    "region_caption": REGION_CAPTION_TEMPLATES,
    "grounding": GROUNDING_TEMPLATES,
    "detection": (DETECTION_SINGLE_TEMPLATE, DETECTION_MULTI_TEMPLATE),
    "counting_regress": COUNTING_TEMPLATES,
    "counting_choice": COUNTING_TEMPLATES,
    "coarse_cls": COARSE_CLS_TEMPLATES,
    "fine_cls": FINE_CLS_TEMPLATES,
}

_COMPILED = {task: tuple(_template_regex(t) for t in temps)
             for task, temps in _TASK_TEMPLATES.items()}


def render_options(options) -> str:
    """Render four numeric choices as 'A. x  B. y  C. z  D. w'."""
    if len(options) != 4:
        raise ValueError(f"need exactly 4 options, got {len(options)}")
    return "  ".join(f"{letter}. {value}" for letter, value in zip(CHOICE_LETTERS, options))


def matching_templates(task: str, question: str) -> int:
    """Number of templates for ``task`` the question matches after substitution.

    Single-choice counting questions have their appended options stripped
    before matching. Free-form VQA has no template table; the count is 0.
    """
    if task == "counting_choice":
        stripped = _OPTIONS_SUFFIX.sub("", question)
        if stripped == question:  # options block missing entirely
            return 0
        question = stripped
    patterns = _COMPILED.get(task)
    if patterns is None:
        return 0
    return sum(1 for p in patterns if p.fullmatch(question))


def question_conforms(task: str, question: str) -> bool:
    """True iff the question matches exactly one template of its task."""
    return matching_templates(task, question) == 1
