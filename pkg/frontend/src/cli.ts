/**
 * Figure CLI.
 *
 *   plot trajectories --csv traj_K10.csv traj_K50.csv --out fig.svg [--squared] [--log-y]
 *   plot final-vs     --csv summary.csv --x clients|mixing-time --out fig.svg [--squared]
 *
 * Rendering is a pure function of the input CSVs: rerunning with the same
 * inputs writes byte-identical SVG.
 */

import { readFileSync, writeFileSync } from 'fs'
import { parseSummaryCsv, parseTrajectoryCsv } from './csv.js'
import { renderFinalVs, renderTrajectories, type SweepAxis } from './figures.js'

interface Args {
    command: string
    csv: string[]
    out: string | null
    squared: boolean
    logY: boolean
    x: SweepAxis
}

export function parseArgs(argv: string[]): Args {
    const [command, ...rest] = argv
    const args: Args = { command: command ?? '', csv: [], out: null, squared: false, logY: false, x: 'clients' }
    let i = 0
    while (i < rest.length) {
        const flag = rest[i]
        if (flag === '--csv') {
            i += 1
            while (i < rest.length && !rest[i].startsWith('--')) {
                args.csv.push(rest[i])
                i += 1
            }
        } else if (flag === '--out') {
            args.out = rest[i + 1] ?? null
            i += 2
        } else if (flag === '--x') {
            const value = rest[i + 1]
            if (value !== 'clients' && value !== 'mixing-time') {
                throw new Error(`--x must be 'clients' or 'mixing-time', got '${value}'`)
            }
            args.x = value
            i += 2
        } else if (flag === '--squared') {
            args.squared = true
            i += 1
        } else if (flag === '--log-y') {
            args.logY = true
            i += 1
        } else {
            throw new Error(`unknown flag '${flag}'`)
        }
    }
    if (args.csv.length === 0) throw new Error('at least one --csv file is required')
    if (!args.out) throw new Error('--out is required')
    return args
}

export function runCli(argv: string[]): number {
    let args: Args
    try {
        args = parseArgs(argv)
        let svg: string
        if (args.command === 'trajectories') {
            const rows = args.csv.flatMap((path) => parseTrajectoryCsv(readFileSync(path, 'utf8'), path))
            svg = renderTrajectories(rows, { squared: args.squared, logY: args.logY })
        } else if (args.command === 'final-vs') {
            const rows = args.csv.flatMap((path) => parseSummaryCsv(readFileSync(path, 'utf8'), path))
            svg = renderFinalVs(rows, args.x, args.squared)
        } else {
            throw new Error(`unknown command '${args.command}' (use trajectories or final-vs)`)
        }
        writeFileSync(args.out!, svg)
        return 0
    } catch (err) {
        console.error(`error: ${err instanceof Error ? err.message : String(err)}`)
        return 1
    }
}

if (process.argv[1] && process.argv[1].endsWith('cli.js')) {
    process.exit(runCli(process.argv.slice(2)))
}
