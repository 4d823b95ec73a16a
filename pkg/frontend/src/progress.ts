/** Progress-panel state: last good payload plus a staleness flag.
 *
 * A failed poll marks the view stale but keeps the last data; the panel
 * never throws on network loss.
 */

import { ApiClient, Progress } from "./api.js";

export interface ProgressView {
  data: Progress | null;
  stale: boolean;
  lastError: string | null;
}

export class ProgressTracker {
  view: ProgressView = { data: null, stale: false, lastError: null };

  constructor(private readonly api: ApiClient) {}

  async poll(): Promise<ProgressView> {
    try {
      const data = await this.api.getProgress();
      this.view = { data, stale: false, lastError: null };
    } catch (err) {
      this.view = {
        data: this.view.data,
        stale: true,
        lastError: err instanceof Error ? err.message : String(err),
      };
    }
    return this.view;
  }

  fractionLabeled(): number {
    const data = this.view.data;
    if (!data || data.budget <= 0) return 0;
    return Math.min(1, data.labeled / data.budget);
  }
}
