/** Payload shapes of the trace-analysis HTTP API (hex fields are 0x-prefixed strings). */

export interface TraceListing {
    keys: string[];
    workloads: string[];
    policies: string[];
}

export interface MessageResponse {
    answer: string;
    evidence: string;
    provenance: Record<string, unknown>;
    retriever_used: string;
    attempts: number;
}

export interface PcStatsRow {
    pc: string;
    accesses: number;
    hits: number;
    misses: number;
    miss_rate_pct: number;
    hit_rate_pct: number;
    mean_accessed_reuse_distance: number | null;
    std_accessed_reuse_distance: number | null;
    mean_evicted_reuse_distance: number | null;
    eviction_count: number;
    wrong_evictions: number;
    wrong_eviction_pct: number;
}

export interface PcStatsTable {
    key: string;
    pcs: PcStatsRow[];
}

export interface CategorySummary {
    tier: "TG" | "ARA";
    count: number;
    scored: number;
    accuracy_pct: number;
}

export interface BenchReport {
    categories: Record<string, CategorySummary>;
    weights: Record<string, number>;
    tg_total_pct: number;
    ara_total_pct: number;
    grand_total_pct: number;
}

export interface SessionInfo {
    session_id: string;
    retriever: string;
    shots: number;
}

export interface SetHotness {
    key: string;
    hot: number[];
    cold: number[];
    table: { set_id: number; accesses: number; hits: number; hit_rate_pct: number }[];
}
