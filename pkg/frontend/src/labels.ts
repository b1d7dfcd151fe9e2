/** The seven emotion labels in stable code order, plus the irrelevant flag.
 *
 * Button layout and keyboard shortcuts follow this exact order: keys 1-7
 * submit the corresponding label, key 0 flags the image as irrelevant.
 */

export const EMOTION_LABELS = [
  "Anger",
  "Disgust",
  "Fear",
  "Happiness",
  "Sadness",
  "Surprise",
  "Neutral",
] as const;

export const IRRELEVANT = "Irrelevant";

export type Verdict = (typeof EMOTION_LABELS)[number] | typeof IRRELEVANT;

/** Map a keyboard key to its verdict; null when the key is not a shortcut. */
export function verdictForKey(key: string): Verdict | null {
  if (key === "0") {
    return IRRELEVANT;
  }
  const index = Number.parseInt(key, 10);
  if (Number.isInteger(index) && index >= 1 && index <= EMOTION_LABELS.length) {
    return EMOTION_LABELS[index - 1];
  }
  return null;
}
