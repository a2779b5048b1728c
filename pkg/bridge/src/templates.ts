/**
 * Prompt-generation templates, one per knowledge dimension, identical to
 * the core package's renderings so a bridge-produced kb.json matches
 * what the core would re-derive.
 */

export const DIMENSIONS = ["GA", "FA", "FT", "CI", "DF"] as const;
export type Dimension = (typeof DIMENSIONS)[number];

export const DEFAULT_WORD_COUNT = 15;

const TEMPLATES: Record<Dimension, string> = {
  GA:
    'Provide a concise English phrase describing the key visual appearance features of a "{class-name}".\n' +
    "Focus on what it looks like (e.g., shape, color, texture, notable parts).\n" +
    "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: " +
    '"A {class-name} typically appears as [YOUR PHRASE HERE]."\n' +
    'Output ONLY the descriptive phrase. Do NOT include "A {class-name} typically appears as".\n' +
    'Descriptive phrase for "{class-name}":',
  FA:
    "Provide a concise English phrase describing one or two highly distinctive or fine-grained visual " +
    'attributes of a "{class-name}" that make it unique or easily identifiable.\n' +
    "Focus on specific, detailed characteristics.\n" +
    "The description should be in English, concise, and approximately {target-word-count} words.\n" +
    "Output ONLY the descriptive phrase itself, suitable for completing the sentence: " +
    '"A distinctive feature of a {class-name} is [YOUR PHRASE HERE]."\n' +
    'Output ONLY the descriptive phrase of the attribute(s). Do NOT include "A distinctive feature of a {class-name} is".\n' +
    'Descriptive phrase of attribute(s) for "{class-name}":',
  FT:
    'Provide a concise English phrase describing the primary function or purpose of a "{class-name}".\n' +
    "Focus on what it is used for.\n" +
    "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: " +
    '"A {class-name} is used for [YOUR PHRASE HERE]."\n' +
    'Output ONLY the descriptive phrase. Do NOT include "A {class-name} is used for".\n' +
    'Descriptive phrase for "{class-name}":',
  CI:
    "Provide a concise English phrase describing the common environments or contexts where a " +
    '"{class-name}" is typically found.\n' +
    "Focus on its usual surroundings or scenarios.\n" +
    "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: " +
    '"A {class-name} is commonly found in [YOUR PHRASE HERE]."\n' +
    'Output ONLY the descriptive phrase. Do NOT include "A {class-name} is commonly found in".\n' +
    'Descriptive phrase for "{class-name}":',
  DF:
    'Describe the key visual differences of a "{class-name}" when compared to a "{confusing-class-name}".\n' +
    'Focus on features that distinguish a "{class-name}" from a "{confusing-class-name}".\n' +
    "The description should be in English, concise, and approximately {target-word-count} words.\n" +
    "Output ONLY the descriptive phrase itself, suitable for completing the sentence: " +
    '"Unlike a {confusing-class-name}, a {class-name} has [YOUR PHRASE HERE]."\n' +
    'Output ONLY the descriptive phrase of differences. Do NOT include "Unlike a {confusing-class-name}, a {class-name} has".\n' +
    'Descriptive phrase of differences for "{class-name}" compared to "{confusing-class-name}":',
};

export const ANCHOR_TEMPLATE = "a photo of a {class-name}";

export function renderPrompt(
  dimension: Dimension,
  className: string,
  confusableName?: string,
  targetWordCount: number = DEFAULT_WORD_COUNT,
): string {
  if (dimension === "DF" && !confusableName) {
    throw new Error("DF prompts require a confusable class name");
  }
  let text = TEMPLATES[dimension]
    .replaceAll("{class-name}", className)
    .replaceAll("{target-word-count}", String(targetWordCount));
  if (dimension === "DF" && confusableName) {
    text = text.replaceAll("{confusing-class-name}", confusableName);
  }
  return text;
}

export function renderAnchor(className: string): string {
  return ANCHOR_TEMPLATE.replaceAll("{class-name}", className);
}
