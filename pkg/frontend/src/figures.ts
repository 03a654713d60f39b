/**
 * The two figure builders: per-round trajectory panels and final-metric
 * sweeps. Both consume only the documented CSV schemas and return SVG
 * text; the gradient norm is displayed as sqrt(grad_norm_sq) unless the
 * squared variant is requested.
 */

import type { SummaryRow, TrajectoryRow } from './csv.js'
import { groupBy, meanCi, trajectoryBand } from './stats.js'
import {
    PALETTE,
    band,
    document,
    fmtTick,
    line,
    linearScale,
    logScale,
    logTicks,
    polyline,
    px,
    text,
    ticks,
} from './svg.js'

export interface TrajectoryOptions {
    squared?: boolean
    logY?: boolean
}

const PANEL_WIDTH = 300
const PANEL_HEIGHT = 260
const MARGIN = { top: 34, right: 12, bottom: 42, left: 56 }

function yLabel(squared: boolean): string {
    return squared ? 'gradient norm squared' : 'gradient norm'
}

/** One panel per K (ascending), one CI-banded line per algorithm. */
export function renderTrajectories(rows: TrajectoryRow[], opts: TrajectoryOptions = {}): string {
    if (rows.length === 0) throw new Error('no trajectory rows selected')
    const squared = opts.squared ?? false
    const ks = [...new Set(rows.map((r) => r.k))].sort((a, b) => a - b)
    const algorithms = [...new Set(rows.map((r) => r.algorithm))].sort()
    const parts: string[] = []

    ks.forEach((k, panel) => {
        const x0 = panel * PANEL_WIDTH
        const panelRows = rows.filter((r) => r.k === k)
        const bands = new Map(
            algorithms
                .map((a) => [a, panelRows.filter((r) => r.algorithm === a)] as const)
                .filter(([, sel]) => sel.length > 0)
                .map(([a, sel]) => [a, trajectoryBand(sel, squared)] as const),
        )
        const tMax = Math.max(...panelRows.map((r) => r.t))
        const values = [...bands.values()].flatMap((b) => b.lo.concat(b.hi))
        let yMin = Math.min(...values)
        let yMax = Math.max(...values)
        if (opts.logY) yMin = Math.max(yMin, 1e-12)
        if (yMax <= yMin) yMax = yMin + 1

        const xScale = linearScale([0, tMax], [x0 + MARGIN.left, x0 + PANEL_WIDTH - MARGIN.right])
        const yScale = opts.logY
            ? logScale([yMin, yMax], [PANEL_HEIGHT - MARGIN.bottom, MARGIN.top])
            : linearScale([yMin, yMax], [PANEL_HEIGHT - MARGIN.bottom, MARGIN.top])

        parts.push(text(x0 + PANEL_WIDTH / 2, 18, `K = ${k}`, 'middle', 13))
        parts.push(line(xScale(0), PANEL_HEIGHT - MARGIN.bottom, xScale(tMax), PANEL_HEIGHT - MARGIN.bottom))
        parts.push(line(x0 + MARGIN.left, MARGIN.top, x0 + MARGIN.left, PANEL_HEIGHT - MARGIN.bottom))
        for (const tick of ticks(0, tMax, 4)) {
            parts.push(line(xScale(tick), PANEL_HEIGHT - MARGIN.bottom, xScale(tick), PANEL_HEIGHT - MARGIN.bottom + 4))
            parts.push(text(xScale(tick), PANEL_HEIGHT - MARGIN.bottom + 16, fmtTick(tick)))
        }
        const yTicks = opts.logY ? logTicks(yMin, yMax) : ticks(yMin, yMax, 5)
        for (const tick of yTicks) {
            parts.push(line(x0 + MARGIN.left - 4, yScale(tick), x0 + MARGIN.left, yScale(tick)))
            parts.push(text(x0 + MARGIN.left - 7, yScale(tick) + 3.5, fmtTick(tick), 'end', 10))
        }
        parts.push(text(x0 + PANEL_WIDTH / 2, PANEL_HEIGHT - 8, 'communication round'))

        let colorIndex = 0
        for (const [algorithm, b] of bands) {
            const color = PALETTE[colorIndex % PALETTE.length]
            colorIndex += 1
            const xs = b.t.map((t) => xScale(t))
            const clamp = (v: number) => (opts.logY ? Math.max(v, yMin) : v)
            parts.push(band(xs, b.lo.map((v) => yScale(clamp(v))), b.hi.map((v) => yScale(clamp(v))), color))
            parts.push(polyline(b.t.map((t, i) => [xs[i], yScale(clamp(b.mean[i]))]), color))
            if (panel === 0) {
                const ly = MARGIN.top + 14 * colorIndex
                parts.push(line(x0 + MARGIN.left + 8, ly - 4, x0 + MARGIN.left + 28, ly - 4, color))
                parts.push(text(x0 + MARGIN.left + 32, ly, algorithm, 'start', 10))
            }
        }
    })
    parts.push(text(14, PANEL_HEIGHT / 2, yLabel(squared), 'middle', 11).replace('<text ', `<text transform="rotate(-90 14 ${px(PANEL_HEIGHT / 2)})" `))
    return document(PANEL_WIDTH * ks.length, PANEL_HEIGHT, parts.join('\n'))
}

export type SweepAxis = 'clients' | 'mixing-time'

function sweepValue(row: SummaryRow, axis: SweepAxis): number | null {
    if (axis === 'clients') return row.m
    const match = row.statistic.match(/\[tau=(\d+)\]/)
    return match ? Number(match[1]) : null
}

/** Final metric vs the sweep variable, one error-barred line per algorithm. */
export function renderFinalVs(rows: SummaryRow[], axis: SweepAxis, squared = false): string {
    const statistic = squared ? 'final_grad_norm_sq' : 'final_grad_norm'
    const selected = rows.filter((r) => r.statistic.startsWith(statistic) && !r.statistic.startsWith(`${statistic}_`))
    const points = selected
        .map((r) => ({ row: r, x: sweepValue(r, axis) }))
        .filter((p): p is { row: SummaryRow; x: number } => p.x !== null)
    if (points.length === 0) throw new Error(`no ${statistic} rows with a ${axis} sweep value`)

    const width = 420
    const height = 300
    const xsAll = points.map((p) => p.x)
    const xMin = Math.min(...xsAll)
    const xMax = Math.max(...xsAll)
    const useLogX = axis === 'mixing-time' && xMax / Math.max(xMin, 1) >= 100
    const xScale = useLogX
        ? logScale([xMin, xMax], [MARGIN.left, width - 16])
        : linearScale([xMin, xMax], [MARGIN.left, width - 16])
    const yValues = points.flatMap((p) => [p.row.mean - p.row.ciHalfwidth, p.row.mean + p.row.ciHalfwidth])
    const yMin = Math.min(...yValues)
    const yMax = Math.max(...yValues)
    const yScale = linearScale([yMin, yMax <= yMin ? yMin + 1 : yMax], [height - MARGIN.bottom, MARGIN.top])

    const parts: string[] = []
    parts.push(line(MARGIN.left, height - MARGIN.bottom, width - 16, height - MARGIN.bottom))
    parts.push(line(MARGIN.left, MARGIN.top, MARGIN.left, height - MARGIN.bottom))
    const xTicks = useLogX ? logTicks(xMin, xMax) : ticks(xMin, xMax, 5)
    for (const tick of xTicks) {
        parts.push(line(xScale(tick), height - MARGIN.bottom, xScale(tick), height - MARGIN.bottom + 4))
        parts.push(text(xScale(tick), height - MARGIN.bottom + 16, fmtTick(tick)))
    }
    for (const tick of ticks(yMin, yMax, 5)) {
        parts.push(line(MARGIN.left - 4, yScale(tick), MARGIN.left, yScale(tick)))
        parts.push(text(MARGIN.left - 7, yScale(tick) + 3.5, fmtTick(tick), 'end', 10))
    }
    parts.push(text((MARGIN.left + width - 16) / 2, height - 8, axis === 'clients' ? 'clients' : 'mixing time'))
    parts.push(text(14, height / 2, yLabel(squared), 'middle', 11).replace('<text ', `<text transform="rotate(-90 14 ${px(height / 2)})" `))

    const byAlgorithm = groupBy(points, (p) => p.row.algorithm)
    let colorIndex = 0
    for (const [algorithm, pts] of [...byAlgorithm.entries()].sort(([a], [b]) => a.localeCompare(b))) {
        const color = PALETTE[colorIndex % PALETTE.length]
        colorIndex += 1
        const ordered = [...pts].sort((a, b) => a.x - b.x)
        // Collapse duplicate x (several seeds groups) via meanCi of means.
        const xsu = [...new Set(ordered.map((p) => p.x))]
        const series = xsu.map((x) => {
            const sel = ordered.filter((p) => p.x === x)
            const mean = meanCi(sel.map((p) => p.row.mean)).mean
            const ci = Math.max(...sel.map((p) => p.row.ciHalfwidth))
            return { x, mean, ci }
        })
        parts.push(polyline(series.map((s) => [xScale(s.x), yScale(s.mean)]), color))
        for (const s of series) {
            const cx = xScale(s.x)
            parts.push(line(cx, yScale(s.mean - s.ci), cx, yScale(s.mean + s.ci), color))
            parts.push(line(cx - 3, yScale(s.mean - s.ci), cx + 3, yScale(s.mean - s.ci), color))
            parts.push(line(cx - 3, yScale(s.mean + s.ci), cx + 3, yScale(s.mean + s.ci), color))
            parts.push(`<circle cx="${px(cx)}" cy="${px(yScale(s.mean))}" r="2.5" fill="${color}"/>`)
        }
        const ly = MARGIN.top + 14 * colorIndex
        parts.push(line(MARGIN.left + 8, ly - 4, MARGIN.left + 28, ly - 4, color))
        parts.push(text(MARGIN.left + 32, ly, algorithm, 'start', 10))
    }
    return document(width, height, parts.join('\n'))
}
