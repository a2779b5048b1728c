/**
 * Bridge CLI: `export --job job.json [--out dir]`.
 *
 * The job file holds classNames, images [{path,label}], encoder id,
 * optional chat endpoint, dim and targetWordCount. The chat API key is
 * taken from BRIDGE_CHAT_API_KEY; the endpoint base URL can also come
 * from BRIDGE_CHAT_BASE_URL when the job enables chat without one.
 */
import { readFileSync } from "node:fs";

import { ExportJob, exportFeatures } from "./export.js";

function fail(message: string, code: number): never {
  console.error(`error: ${message}`);
  process.exit(code);
}

function parseArgs(argv: string[]): { jobPath: string; outDir?: string } {
  if (argv[0] !== "export") fail(`unknown subcommand ${argv[0] ?? "(none)"}; expected "export"`, 1);
  let jobPath: string | undefined;
  let outDir: string | undefined;
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) fail(`flag ${flag} needs a value`, 1);
    if (flag === "--job") jobPath = value;
    else if (flag === "--out") outDir = value;
    else fail(`unknown flag ${flag}`, 1);
  }
  if (!jobPath) fail("--job is required", 1);
  return { jobPath, outDir };
}

async function main(): Promise<void> {
  const { jobPath, outDir } = parseArgs(process.argv.slice(2));
  let job: ExportJob;
  try {
    job = JSON.parse(readFileSync(jobPath, "utf-8")) as ExportJob;
  } catch (err) {
    fail(`cannot read job file: ${err}`, 1);
  }
  if (outDir) job.outDir = outDir;
  if (!job.outDir) fail("job has no outDir and --out was not given", 1);
  if (job.chat) {
    job.chat.apiKey = process.env.BRIDGE_CHAT_API_KEY ?? job.chat.apiKey;
    job.chat.baseUrl = job.chat.baseUrl || process.env.BRIDGE_CHAT_BASE_URL || "";
    if (!job.chat.baseUrl) fail("chat enabled but no base URL configured", 1);
  }
  const result = await exportFeatures(job);
  console.log(
    `exported ${result.outDir}: d=${result.dim}, ` +
      `${result.totalSlots - result.fallbackSlots}/${result.totalSlots} slots generated, ` +
      `${result.fallbackSlots} fallback, ${result.offNormRows} off-norm rows`,
  );
}

main().catch((err) => {
  console.error(`error: ${err instanceof Error ? err.message : err}`);
  process.exit(2);
});
