/**
 * Thin typed client for the trace-analysis service.
 *
 * The UI talks only to this API; it never recomputes statistics on the
 * client side, so everything shown on screen is a value the service
 * produced from the trace.
 */

import type {
    BenchReport,
    MessageResponse,
    PcStatsTable,
    SessionInfo,
    SetHotness,
    TraceListing,
} from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
    constructor(
        public status: number,
        public detail: unknown,
    ) {
        super(`API error ${status}: ${JSON.stringify(detail)}`);
    }
}

export class ApiClient {
    private fetchImpl: FetchLike;

    constructor(
        private baseUrl: string = "",
        fetchImpl?: FetchLike,
    ) {
        // injectable for tests; bound so it works as a free function
        this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
    }

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
        let body: unknown = null;
        try {
            body = await response.json();
        } catch {
            body = null;
        }
        if (!response.ok) {
            throw new ApiError(response.status, (body as { detail?: unknown })?.detail ?? body);
        }
        return body as T;
    }

    private post<T>(path: string, payload: unknown): Promise<T> {
        return this.request<T>(path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        });
    }

    listTraces(): Promise<TraceListing> {
        return this.request("/traces");
    }

    pcStats(key: string): Promise<PcStatsTable> {
        return this.request(`/traces/${encodeURIComponent(key)}/stats`);
    }

    setHotness(key: string, k = 5): Promise<SetHotness> {
        return this.request(`/traces/${encodeURIComponent(key)}/sets?k=${k}`);
    }

    createSession(retriever: string, shots = 0): Promise<SessionInfo> {
        return this.post("/sessions", { retriever, shots });
    }

    sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
        return this.post(`/sessions/${encodeURIComponent(sessionId)}/messages`, { text });
    }

    async runBench(questionsPath: string, retriever = "sieve"): Promise<string> {
        const started = await this.post<{ run_id: string }>("/bench/runs", {
            questions_path: questionsPath,
            retriever,
        });
        return started.run_id;
    }

    benchReport(runId: string): Promise<BenchReport> {
        return this.request(`/bench/runs/${encodeURIComponent(runId)}`);
    }
}
