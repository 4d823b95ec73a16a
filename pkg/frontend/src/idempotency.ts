/** Idempotency keys: one fresh key per logical submission.
 *
 * The key is minted when a submission starts and reused only by retries of
 * that same submission (so a replay after a flaky response cannot commit
 * twice); a new submission after an explicit rejection gets a new key.
 */

let counter = 0;

export function freshKey(sampleId: string): string {
  counter += 1;
  const entropy =
    typeof crypto !== "undefined" && "randomUUID" in crypto
      ? crypto.randomUUID()
      : `${Date.now()}-${Math.random().toString(36).slice(2)}`;
  return `${sampleId}-${counter}-${entropy}`;
}
