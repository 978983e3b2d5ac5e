import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { hoverProbe, linearScales, renderCdfSvg, seriesFromReport, stepPathD } from "../src/cdf.js";
import type { LatencyReport } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));

function fixture(name: string): LatencyReport {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as LatencyReport;
}

// real harness output, not synthetic data
const light = fixture("report-level-5.json");
const loaded = fixture("report-level-60.json");

describe("series construction from harness reports", () => {
  it("accepts real report files and keeps fractions non-decreasing", () => {
    for (const report of [light, loaded]) {
      const series = seriesFromReport("x", report);
      const fracs = series.points.map(([, f]) => f);
      expect(fracs.every((f, i) => i === 0 || f >= fracs[i - 1]!)).toBe(true);
      expect(fracs.at(-1)).toBe(1);
    }
  });

  it("the starved level reports skipped events", () => {
    expect(light.skipped_count).toBe(0);
    expect(loaded.skipped_count).toBeGreaterThan(0);
  });

  it("rejects a corrupted series", () => {
    const bad: LatencyReport = { ...light, cdf: [[1, 0.5], [2, 0.25]] };
    expect(() => seriesFromReport("bad", bad)).toThrow(/non-decreasing/);
  });
});

describe("step geometry", () => {
  const series = seriesFromReport("5", light);
  const scales = linearScales([series], 640, 360);

  it("builds a step-after path", () => {
    const d = stepPathD(series.points, scales);
    expect(d.startsWith("M ")).toBe(true);
    expect(d).toContain(" H ");
    expect(d).toContain(" V ");
    // one horizontal move per subsequent point
    expect(d.split(" H ").length - 1).toBe(series.points.length - 1);
  });

  it("hover reveals the (t, fraction) pair at a time", () => {
    const [t0, f0] = series.points[0]!;
    expect(hoverProbe(series, t0 - 0.001)).toBeNull();
    expect(hoverProbe(series, t0)).toEqual([t0, f0]);
    const last = series.points.at(-1)!;
    expect(hoverProbe(series, 1e9)).toEqual(last);
  });
});

describe("chart rendering", () => {
  it("draws one step line per load level with a legend", () => {
    const svg = renderCdfSvg([seriesFromReport("5 sims", light), seriesFromReport("60 sims", loaded)]);
    expect(svg.match(/class="cdf-line"/g)).toHaveLength(2);
    expect(svg).toContain(">5 sims</text>");
    expect(svg).toContain(">60 sims</text>");
  });

  it("the loaded level sits right of the light one", () => {
    const five = seriesFromReport("5", light);
    const sixty = seriesFromReport("60", loaded);
    const maxLight = Math.max(...five.points.map(([t]) => t));
    const minLoaded = Math.min(...sixty.points.map(([t]) => t));
    expect(minLoaded).toBeGreaterThan(maxLight);
    // median comparison, same reading as the percentile table
    const median = (pts: [number, number][]) => pts.find(([, f]) => f >= 0.5)![0];
    expect(median(sixty.points)).toBeGreaterThan(median(five.points));
  });

  it("renders a placeholder without reports", () => {
    expect(renderCdfSvg([])).toContain("no reports yet");
  });
});
