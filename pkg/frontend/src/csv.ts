/**
 * Parsers for the two CSV schemas the simulator emits.
 *
 * Trajectory rows: seed,algorithm,M,K,t,grad_norm_sq,train_loss
 * Summary rows:    algorithm,M,K,statistic,mean,ci_halfwidth
 */

export interface TrajectoryRow {
    seed: number
    algorithm: string
    m: number
    k: number
    t: number
    gradNormSq: number
    trainLoss: number
}

export interface SummaryRow {
    algorithm: string
    m: number
    k: number
    statistic: string
    mean: number
    ciHalfwidth: number
}

export const TRAJECTORY_HEADER = ['seed', 'algorithm', 'M', 'K', 't', 'grad_norm_sq', 'train_loss']
export const SUMMARY_HEADER = ['algorithm', 'M', 'K', 'statistic', 'mean', 'ci_halfwidth']

function splitCsv(text: string): string[][] {
    return text
        .split(/\r?\n/)
        .filter((line) => line.length > 0)
        .map((line) => line.split(','))
}

function checkHeader(got: string[], want: string[], label: string): void {
    if (got.length !== want.length || want.some((col, i) => got[i] !== col)) {
        throw new Error(`${label}: header [${got.join(',')}] does not match [${want.join(',')}]`)
    }
}

function num(field: string, row: number, label: string): number {
    const value = Number(field)
    if (!Number.isFinite(value)) {
        throw new Error(`${label}: non-numeric value '${field}' in data row ${row}`)
    }
    return value
}

export function parseTrajectoryCsv(text: string, label = 'trajectory csv'): TrajectoryRow[] {
    const lines = splitCsv(text)
    if (lines.length === 0) throw new Error(`${label}: empty file`)
    checkHeader(lines[0], TRAJECTORY_HEADER, label)
    return lines.slice(1).map((fields, i) => ({
        seed: num(fields[0], i, label),
        algorithm: fields[1],
        m: num(fields[2], i, label),
        k: num(fields[3], i, label),
        t: num(fields[4], i, label),
        gradNormSq: num(fields[5], i, label),
        trainLoss: num(fields[6], i, label),
    }))
}

export function parseSummaryCsv(text: string, label = 'summary csv'): SummaryRow[] {
    const lines = splitCsv(text)
    if (lines.length === 0) throw new Error(`${label}: empty file`)
    checkHeader(lines[0], SUMMARY_HEADER, label)
    return lines.slice(1).map((fields, i) => ({
        algorithm: fields[0],
        m: num(fields[1], i, label),
        k: num(fields[2], i, label),
        statistic: fields[3],
        mean: num(fields[4], i, label),
        ciHalfwidth: num(fields[5], i, label),
    }))
}
