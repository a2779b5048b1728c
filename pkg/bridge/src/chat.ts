/**
 * Minimal chat-completion client: generic request shape, bounded
 * retries with exponential backoff, and a concurrency-limited map that
 * places results deterministically by slot index.
 */

export interface ChatConfig {
  baseUrl: string;
  model?: string;
  apiKey?: string;
  maxRetries?: number;
  retryDelayMs?: number;
  concurrency?: number;
  fetchFn?: typeof fetch;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export async function chatComplete(cfg: ChatConfig, prompt: string): Promise<string> {
  const doFetch = cfg.fetchFn ?? fetch;
  const retries = cfg.maxRetries ?? 3;
  let delay = cfg.retryDelayMs ?? 250;
  let lastError: unknown = null;
  for (let attempt = 0; attempt <= retries; attempt++) {
    try {
      const headers: Record<string, string> = { "Content-Type": "application/json" };
      if (cfg.apiKey) headers.Authorization = `Bearer ${cfg.apiKey}`;
      const response = await doFetch(`${cfg.baseUrl}/chat/completions`, {
        method: "POST",
        headers,
        body: JSON.stringify({
          model: cfg.model ?? "default",
          messages: [{ role: "user", content: prompt }],
          temperature: 0,
        }),
      });
      if (response.status === 429 || response.status >= 500) {
        throw new Error(`retryable HTTP ${response.status}`);
      }
      if (!response.ok) {
        throw new Error(`chat endpoint: HTTP ${response.status}`);
      }
      const body = (await response.json()) as { choices: { message: { content: string } }[] };
      const content = body.choices?.[0]?.message?.content;
      if (typeof content !== "string" || content.length === 0) {
        throw new Error("chat endpoint returned an empty completion");
      }
      return content.trim();
    } catch (err) {
      lastError = err;
      if (attempt < retries) {
        await sleep(delay);
        delay *= 2;
      }
    }
  }
  throw lastError instanceof Error ? lastError : new Error(String(lastError));
}

/**
 * Run `worker` over every index with at most `limit` in flight; the
 * result array is ordered by index regardless of completion order.
 */
export async function boundedMap<T>(
  count: number,
  limit: number,
  worker: (index: number) => Promise<T>,
): Promise<T[]> {
  const results = new Array<T>(count);
  let next = 0;
  const lanes = Array.from({ length: Math.max(1, Math.min(limit, count)) }, async () => {
    while (true) {
      const index = next++;
      if (index >= count) return;
      results[index] = await worker(index);
    }
  });
  await Promise.all(lanes);
  return results;
}
