/**
 * Minimal deterministic SVG builder.
 *
 * Everything is assembled from plain strings with fixed-precision
 * coordinates and no timestamps or generated ids, so identical inputs
 * produce byte-identical files.
 */

export interface Scale {
    (value: number): number
    domain: [number, number]
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
    const [d0, d1] = domain
    const [r0, r1] = range
    const span = d1 - d0 || 1
    const scale = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale
    scale.domain = domain
    return scale
}

export function logScale(domain: [number, number], range: [number, number]): Scale {
    const lo = Math.log10(domain[0])
    const hi = Math.log10(domain[1])
    const inner = linearScale([lo, hi], range)
    const scale = ((value: number) => inner(Math.log10(value))) as Scale
    scale.domain = domain
    return scale
}

export function px(value: number): string {
    return value.toFixed(2)
}

export function ticks(lo: number, hi: number, count = 5): number[] {
    if (!(hi > lo)) return [lo]
    const step = Math.pow(10, Math.floor(Math.log10((hi - lo) / count)))
    const err = (hi - lo) / count / step
    const factor = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1
    const nice = step * factor
    const start = Math.ceil(lo / nice) * nice
    const out: number[] = []
    for (let v = start; v <= hi + 1e-12 * nice; v += nice) out.push(v)
    return out
}

export function logTicks(lo: number, hi: number): number[] {
    const out: number[] = []
    for (let e = Math.ceil(Math.log10(lo)); Math.pow(10, e) <= hi * (1 + 1e-12); e++) {
        out.push(Math.pow(10, e))
    }
    return out.length > 0 ? out : [lo]
}

export function fmtTick(value: number): string {
    if (value === 0) return '0'
    const abs = Math.abs(value)
    if (abs >= 1e4 || abs < 1e-3) return value.toExponential(0)
    return parseFloat(value.toPrecision(4)).toString()
}

export const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b']

export function polyline(points: Array<[number, number]>, stroke: string, width = 1.5): string {
    const path = points.map(([x, y], i) => `${i === 0 ? 'M' : 'L'}${px(x)},${px(y)}`).join('')
    return `<path d="${path}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`
}

export function band(
    xs: number[],
    los: number[],
    his: number[],
    fill: string,
): string {
    const upper = xs.map((x, i) => `${i === 0 ? 'M' : 'L'}${px(x)},${px(his[i])}`).join('')
    const lower = [...xs.keys()]
        .reverse()
        .map((i) => `L${px(xs[i])},${px(los[i])}`)
        .join('')
    return `<path d="${upper}${lower}Z" fill="${fill}" fill-opacity="0.18" stroke="none"/>`
}

export function text(
    x: number,
    y: number,
    content: string,
    anchor: 'start' | 'middle' | 'end' = 'middle',
    size = 11,
): string {
    return (
        `<text x="${px(x)}" y="${px(y)}" text-anchor="${anchor}" ` +
        `font-family="Helvetica,Arial,sans-serif" font-size="${size}">${content}</text>`
    )
}

export function line(x1: number, y1: number, x2: number, y2: number, stroke = '#333'): string {
    return `<line x1="${px(x1)}" y1="${px(y1)}" x2="${px(x2)}" y2="${px(y2)}" stroke="${stroke}" stroke-width="1"/>`
}

export function document(width: number, height: number, body: string): string {
    return (
        `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}">\n<rect width="${width}" height="${height}" fill="white"/>\n` +
        body +
        '\n</svg>\n'
    )
}
