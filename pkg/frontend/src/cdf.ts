/** CDF chart construction from latency reports.
 *
 * Pure string/geometry functions: the step paths and the final SVG are
 * computed without touching the DOM, so they are directly testable. One
 * step-after line per load level, legend included; hover lookups resolve the
 * (t, fraction) pair at a given time.
 */

import type { LatencyReport } from "./types.js";

export interface CdfSeries {
  label: string;
  points: [number, number][]; // (t_ms, fraction), fraction non-decreasing
}

const PALETTE = ["#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2"];

export function seriesFromReport(label: string, report: LatencyReport): CdfSeries {
  const points = report.cdf;
  for (let i = 1; i < points.length; i++) {
    const prev = points[i - 1];
    const cur = points[i];
    if (prev && cur && cur[1] < prev[1]) {
      throw new Error(`CDF fractions must be non-decreasing in series ${label}`);
    }
  }
  return { label, points: points.map(([t, f]) => [t, f]) };
}

export interface Scales {
  x: (t: number) => number;
  y: (f: number) => number;
  tMax: number;
}

export function linearScales(
  seriesList: CdfSeries[],
  width: number,
  height: number,
  pad = 36,
): Scales {
  let tMax = 0;
  for (const s of seriesList) {
    for (const [t] of s.points) tMax = Math.max(tMax, t);
  }
  if (tMax === 0) tMax = 1;
  return {
    x: (t) => pad + (t / tMax) * (width - 2 * pad),
    y: (f) => height - pad - f * (height - 2 * pad),
    tMax,
  };
}

/** Step-after path: horizontal to the next t, then vertical to its fraction. */
export function stepPathD(points: [number, number][], scales: Scales): string {
  const first = points[0];
  if (!first) return "";
  let d = `M ${scales.x(first[0]).toFixed(2)} ${scales.y(0).toFixed(2)}`;
  d += ` V ${scales.y(first[1]).toFixed(2)}`;
  let prevF = first[1];
  for (let i = 1; i < points.length; i++) {
    const point = points[i];
    if (!point) continue;
    const [t, f] = point;
    d += ` H ${scales.x(t).toFixed(2)}`;
    if (f !== prevF) d += ` V ${scales.y(f).toFixed(2)}`;
    prevF = f;
  }
  return d;
}

/** CDF value at time t: the last point with tᵢ <= t, or null before the first. */
export function hoverProbe(series: CdfSeries, t: number): [number, number] | null {
  let hit: [number, number] | null = null;
  for (const [pt, pf] of series.points) {
    if (pt <= t) hit = [pt, pf];
    else break;
  }
  return hit;
}

/** Full chart as an SVG string; empty input yields a placeholder. */
export function renderCdfSvg(seriesList: CdfSeries[], width = 640, height = 360): string {
  if (seriesList.length === 0 || seriesList.every((s) => s.points.length === 0)) {
    return (
      `<svg class="cdf-chart" viewBox="0 0 ${width} ${height}" xmlns="http://www.w3.org/2000/svg">` +
      `<text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="placeholder">` +
      `no reports yet</text></svg>`
    );
  }
  const scales = linearScales(seriesList, width, height);
  const parts: string[] = [
    `<svg class="cdf-chart" viewBox="0 0 ${width} ${height}" xmlns="http://www.w3.org/2000/svg">`,
    `<line x1="36" y1="${height - 36}" x2="${width - 36}" y2="${height - 36}" stroke="#888"/>`,
    `<line x1="36" y1="36" x2="36" y2="${height - 36}" stroke="#888"/>`,
    `<text x="${width / 2}" y="${height - 8}" text-anchor="middle" class="axis-label">response time (ms, max ${scales.tMax.toFixed(0)})</text>`,
    `<text x="12" y="${height / 2}" transform="rotate(-90 12 ${height / 2})" text-anchor="middle" class="axis-label">fraction of events</text>`,
  ];
  seriesList.forEach((series, i) => {
    const color = PALETTE[i % PALETTE.length];
    parts.push(
      `<path class="cdf-line" data-label="${series.label}" d="${stepPathD(series.points, scales)}" ` +
        `fill="none" stroke="${color}" stroke-width="2"/>`,
    );
    parts.push(
      `<text x="${width - 40}" y="${48 + i * 18}" text-anchor="end" fill="${color}" class="legend">` +
        `${series.label}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}
