/**
 * Pure HTML renderers for every pane.
 *
 * All functions are string -> string with no DOM access and no statistics
 * recomputation: the UI shows exactly the values the service returned.
 * Keeping them pure makes the component tests plain snapshot checks.
 */

import type { BenchReport, MessageResponse, PcStatsRow, PcStatsTable } from "./types.js";

export function escapeHtml(text: string): string {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}

// --- evidence pane ----------------------------------------------------------

export interface ExcerptRow {
    pc: string;
    address: string;
    set: string;
    outcome: string;
}

export interface ParsedEvidence {
    excerpt: ExcerptRow[];
    statsLines: string[];
    assembly: string[];
    metadata: string;
    notFound: boolean;
}

const RECORD_HEAD = /^For policy \S+ on workload \S+ at PC (0x[0-9a-f]+) and address (0x[0-9a-f]+):$/;
const SET_LINE = /^Set (\d+); /;
const NOT_FOUND = "Exact PC, Memory Address match not found";

/**
 * Split the service's deterministic evidence text into display rows.  This
 * is presentation-only parsing of our own service's format; the values
 * themselves pass through untouched.
 */
export function parseEvidence(evidence: string): ParsedEvidence {
    const parsed: ParsedEvidence = {
        excerpt: [],
        statsLines: [],
        assembly: [],
        metadata: "",
        notFound: evidence.includes(NOT_FOUND),
    };
    const lines = evidence.split("\n");
    let section = "";
    let current: ExcerptRow | null = null;
    let inAssembly = false;
    for (let i = 0; i < lines.length; i++) {
        const line = lines[i] ?? "";
        if (line.startsWith("--- ")) {
            section = line;
            current = null;
            inAssembly = false;
            continue;
        }
        if (section.startsWith("--- Trace excerpt")) {
            const head = RECORD_HEAD.exec(line);
            if (head) {
                current = { pc: head[1] ?? "", address: head[2] ?? "", set: "", outcome: "" };
                parsed.excerpt.push(current);
                continue;
            }
            if (current && line.startsWith("Cache result: ")) {
                current.outcome = line.slice("Cache result: ".length);
                continue;
            }
            if (current) {
                const set = SET_LINE.exec(line);
                if (set) {
                    current.set = set[1] ?? "";
                }
            }
        } else if (section.startsWith("--- PC statistics")) {
            if (line.startsWith("Assembly for PC ")) {
                inAssembly = true;
                continue;
            }
            if (inAssembly) {
                parsed.assembly.push(line);
            } else if (line.trim()) {
                parsed.statsLines.push(line);
            }
        } else if (section.startsWith("--- Trace metadata")) {
            if (line.trim()) {
                parsed.metadata = line;
            }
        }
    }
    return parsed;
}

export function renderEvidencePane(response: MessageResponse): string {
    const parsed = parseEvidence(response.evidence);
    const provenance = response.provenance as Record<string, unknown>;
    const chips = [
        `<span class="chip chip-key">${escapeHtml(String(provenance["key"] ?? "?"))}</span>`,
        `<span class="chip chip-retriever">${escapeHtml(response.retriever_used)}</span>`,
        `<span class="chip chip-attempts">attempts: ${response.attempts}</span>`,
    ];
    const parts: string[] = [`<div class="provenance">${chips.join(" ")}</div>`];

    if (typeof provenance["program"] === "string") {
        parts.push(
            `<div class="query-program"><h4>Executed query program</h4>` +
                `<pre>${escapeHtml(provenance["program"] as string)}</pre></div>`,
        );
    }
    if (parsed.notFound) {
        parts.push(`<p class="not-found">${escapeHtml(NOT_FOUND)}</p>`);
    }
    if (parsed.excerpt.length > 0) {
        const rows = parsed.excerpt
            .map(
                (row) =>
                    `<tr><td class="hex">${escapeHtml(row.pc)}</td>` +
                    `<td class="hex">${escapeHtml(row.address)}</td>` +
                    `<td>${escapeHtml(row.set)}</td>` +
                    `<td class="${row.outcome === "Cache Miss" ? "miss" : "hit"}">${escapeHtml(row.outcome)}</td></tr>`,
            )
            .join("");
        parts.push(
            `<table class="excerpt"><thead><tr><th>PC</th><th>Address</th><th>Set</th><th>Outcome</th></tr></thead>` +
                `<tbody>${rows}</tbody></table>`,
        );
    }
    if (parsed.statsLines.length > 0) {
        const items = parsed.statsLines.map((line) => `<li>${escapeHtml(line)}</li>`).join("");
        parts.push(`<ul class="pc-stats">${items}</ul>`);
    }
    if (parsed.assembly.length > 0) {
        parts.push(`<pre class="assembly">${escapeHtml(parsed.assembly.join("\n"))}</pre>`);
    }
    if (parsed.metadata) {
        parts.push(`<p class="metadata">${escapeHtml(parsed.metadata)}</p>`);
    }
    parts.push(`<details class="raw-evidence"><summary>Raw evidence</summary>` +
        `<pre>${escapeHtml(response.evidence)}</pre></details>`);
    return `<div class="evidence-pane">${parts.join("\n")}</div>`;
}

export function renderChatTurn(role: "user" | "assistant", text: string): string {
    return `<div class="chat-turn ${role}"><span class="role">${role}</span>` +
        `<div class="bubble">${escapeHtml(text)}</div></div>`;
}

export function renderChatExchange(question: string, response: MessageResponse): string {
    return [
        renderChatTurn("user", question),
        renderChatTurn("assistant", response.answer),
        renderEvidencePane(response),
    ].join("\n");
}

// --- bench dashboard ---------------------------------------------------------

export function renderBenchDashboard(report: BenchReport): string {
    const bars = Object.entries(report.categories)
        .map(([name, summary]) => {
            const height = Math.max(2, Math.round(summary.accuracy_pct));
            return (
                `<div class="bar-cell" data-tier="${summary.tier}">` +
                `<div class="bar" style="height:${height}px" title="${summary.accuracy_pct.toFixed(2)}%"></div>` +
                `<span class="bar-value">${summary.accuracy_pct.toFixed(1)}</span>` +
                `<span class="bar-label">${escapeHtml(name)}</span>` +
                `<span class="bar-weight">n=${summary.count}</span>` +
                `</div>`
            );
        })
        .join("");
    const totals =
        `<p class="totals">` +
        `<span class="total total-tg">TG total: ${report.tg_total_pct.toFixed(2)}%</span> ` +
        `<span class="total total-ara">ARA total: ${report.ara_total_pct.toFixed(2)}%</span> ` +
        `<span class="total total-grand">weighted grand total: ${report.grand_total_pct.toFixed(2)}%</span>` +
        `</p>`;
    return `<div class="dashboard"><div class="bars">${bars}</div>${totals}</div>`;
}

// --- trace browser -----------------------------------------------------------

export function renderTraceList(keys: string[], selected?: string): string {
    if (keys.length === 0) {
        return `<p class="empty-state">No traces in the store.</p>`;
    }
    const items = keys
        .map((key) => {
            const cls = key === selected ? ` class="selected"` : "";
            return `<li${cls} data-key="${escapeHtml(key)}">${escapeHtml(key)}</li>`;
        })
        .join("");
    return `<ul class="trace-list">${items}</ul>`;
}

export type PcSortKey = "pc" | "accesses" | "miss_rate_pct" | "hit_rate_pct";

export function sortPcRows(rows: PcStatsRow[], key: PcSortKey, descending: boolean): PcStatsRow[] {
    const sorted = [...rows].sort((a, b) => {
        const left = a[key];
        const right = b[key];
        const order = typeof left === "string"
            ? (left as string).localeCompare(right as string)
            : (left as number) - (right as number);
        return descending ? -order : order;
    });
    return sorted;
}

export function renderPcTable(
    table: PcStatsTable,
    sortKey: PcSortKey = "miss_rate_pct",
    descending = true,
): string {
    if (table.pcs.length === 0) {
        return `<p class="empty-state">No PCs recorded for ${escapeHtml(table.key)}.</p>`;
    }
    const rows = sortPcRows(table.pcs, sortKey, descending)
        .map(
            (row) =>
                `<tr><td class="hex">${escapeHtml(row.pc)}</td>` +
                `<td>${row.accesses}</td><td>${row.hits}</td><td>${row.misses}</td>` +
                `<td>${row.miss_rate_pct.toFixed(2)}</td>` +
                `<td>${row.eviction_count}</td>` +
                `<td>${row.wrong_eviction_pct.toFixed(2)}</td></tr>`,
        )
        .join("");
    const arrow = descending ? "▼" : "▲";
    const header = (key: PcSortKey, label: string) =>
        `<th data-sort="${key}">${label}${key === sortKey ? ` ${arrow}` : ""}</th>`;
    return (
        `<table class="pc-table"><thead><tr>` +
        header("pc", "PC") +
        header("accesses", "Accesses") +
        `<th>Hits</th><th>Misses</th>` +
        header("miss_rate_pct", "Miss rate %") +
        `<th>Evictions</th><th>Wrong ev. %</th>` +
        `</tr></thead><tbody>${rows}</tbody></table>`
    );
}
