/** Seed aggregation: means with 95% confidence bands. */

import type { TrajectoryRow } from './csv.js'

export interface Band {
    t: number[]
    mean: number[]
    lo: number[]
    hi: number[]
}

export function meanCi(values: number[]): { mean: number; ci: number } {
    const n = values.length
    const mean = values.reduce((a, b) => a + b, 0) / n
    if (n < 2) return { mean, ci: 0 }
    const varSum = values.reduce((a, b) => a + (b - mean) * (b - mean), 0)
    const stderr = Math.sqrt(varSum / (n - 1)) / Math.sqrt(n)
    return { mean, ci: 1.96 * stderr }
}

/** Per-round mean +/- CI over seeds for one algorithm's rows. */
export function trajectoryBand(rows: TrajectoryRow[], squared: boolean): Band {
    const byRound = new Map<number, number[]>()
    for (const row of rows) {
        const value = squared ? row.gradNormSq : Math.sqrt(row.gradNormSq)
        const bucket = byRound.get(row.t)
        if (bucket) bucket.push(value)
        else byRound.set(row.t, [value])
    }
    const ts = [...byRound.keys()].sort((a, b) => a - b)
    const band: Band = { t: [], mean: [], lo: [], hi: [] }
    for (const t of ts) {
        const { mean, ci } = meanCi(byRound.get(t)!)
        band.t.push(t)
        band.mean.push(mean)
        band.lo.push(mean - ci)
        band.hi.push(mean + ci)
    }
    return band
}

export function groupBy<T>(rows: T[], key: (row: T) => string): Map<string, T[]> {
    const out = new Map<string, T[]>()
    for (const row of rows) {
        const k = key(row)
        const bucket = out.get(k)
        if (bucket) bucket.push(row)
        else out.set(k, [row])
    }
    return out
}
