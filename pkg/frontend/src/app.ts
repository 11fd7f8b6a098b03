/**
 * SPA shell: wires the chat pane, evidence pane, trace browser and bench
 * dashboard to the service API.  All state lives in this module; rendering
 * is delegated to the pure functions in render.js.
 */

import { ApiClient, ApiError } from "./api.js";
import {
    PcSortKey,
    renderBenchDashboard,
    renderChatTurn,
    renderEvidencePane,
    renderPcTable,
    renderTraceList,
} from "./render.js";
import type { MessageResponse, PcStatsTable } from "./types.js";

const api = new ApiClient("");

interface ViewState {
    sessionId: string | null;
    retriever: string;
    shots: number;
    selectedTrace: string | null;
    statsTable: PcStatsTable | null;
    sortKey: PcSortKey;
    sortDescending: boolean;
    lastReportId: string | null;
}

const state: ViewState = {
    sessionId: null,
    retriever: "auto",
    shots: 0,
    selectedTrace: null,
    statsTable: null,
    sortKey: "miss_rate_pct",
    sortDescending: true,
    lastReportId: null,
};

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node as T;
}

function showError(message: string): void {
    const banner = el<HTMLDivElement>("error-banner");
    banner.textContent = message;
    banner.hidden = false;
    setTimeout(() => {
        banner.hidden = true;
    }, 6000);
}

async function ensureSession(): Promise<string> {
    if (state.sessionId === null) {
        const session = await api.createSession(state.retriever, state.shots);
        state.sessionId = session.session_id;
    }
    return state.sessionId;
}

async function sendMessage(): Promise<void> {
    const input = el<HTMLInputElement>("chat-input");
    const text = input.value.trim();
    if (!text) {
        return;
    }
    const log = el<HTMLDivElement>("chat-log");
    log.insertAdjacentHTML("beforeend", renderChatTurn("user", text));
    input.value = "";
    updateSendButton();
    try {
        const sessionId = await ensureSession();
        const response: MessageResponse = await api.sendMessage(sessionId, text);
        log.insertAdjacentHTML("beforeend", renderChatTurn("assistant", response.answer));
        el<HTMLDivElement>("evidence").innerHTML = renderEvidencePane(response);
        log.scrollTop = log.scrollHeight;
    } catch (error) {
        input.value = text; // keep the message for retry
        updateSendButton();
        showError(error instanceof ApiError ? error.message : String(error));
    }
}

function updateSendButton(): void {
    const input = el<HTMLInputElement>("chat-input");
    el<HTMLButtonElement>("chat-send").disabled = input.value.trim().length === 0;
}

async function selectTrace(key: string): Promise<void> {
    state.selectedTrace = key;
    try {
        state.statsTable = await api.pcStats(key);
    } catch (error) {
        state.statsTable = null;
        el<HTMLDivElement>("pc-table").innerHTML =
            error instanceof ApiError && error.status === 404
                ? `<p class="empty-state">Trace not found.</p>`
                : `<p class="empty-state">Failed to load statistics.</p>`;
        return;
    }
    renderBrowser();
}

function renderBrowser(): void {
    const listNode = el<HTMLDivElement>("trace-list");
    api.listTraces().then(
        (listing) => {
            listNode.innerHTML = renderTraceList(listing.keys, state.selectedTrace ?? undefined);
        },
        () => {
            listNode.innerHTML = renderTraceList([]);
        },
    );
    if (state.statsTable) {
        el<HTMLDivElement>("pc-table").innerHTML = renderPcTable(
            state.statsTable,
            state.sortKey,
            state.sortDescending,
        );
    }
}

async function runBench(): Promise<void> {
    const path = el<HTMLInputElement>("bench-questions").value.trim();
    if (!path) {
        showError("Give the server-side path of a questions file.");
        return;
    }
    const button = el<HTMLButtonElement>("bench-run");
    button.disabled = true;
    try {
        const runId = await api.runBench(path, el<HTMLSelectElement>("bench-retriever").value);
        state.lastReportId = runId;
        const report = await api.benchReport(runId);
        el<HTMLDivElement>("dashboard").innerHTML = renderBenchDashboard(report);
    } catch (error) {
        showError(error instanceof ApiError ? error.message : String(error));
    } finally {
        button.disabled = false;
    }
}

function wire(): void {
    el<HTMLButtonElement>("chat-send").addEventListener("click", () => void sendMessage());
    const input = el<HTMLInputElement>("chat-input");
    input.addEventListener("input", updateSendButton);
    input.addEventListener("keydown", (event) => {
        if (event.key === "Enter" && input.value.trim()) {
            void sendMessage();
        }
    });
    updateSendButton();

    el<HTMLSelectElement>("retriever-select").addEventListener("change", (event) => {
        state.retriever = (event.target as HTMLSelectElement).value;
        state.sessionId = null; // new pipeline config, new session
    });
    el<HTMLSelectElement>("shots-select").addEventListener("change", (event) => {
        state.shots = Number((event.target as HTMLSelectElement).value);
        state.sessionId = null;
    });

    el<HTMLDivElement>("trace-list").addEventListener("click", (event) => {
        const item = (event.target as HTMLElement).closest("li[data-key]");
        if (item) {
            void selectTrace(item.getAttribute("data-key") ?? "");
        }
    });
    el<HTMLDivElement>("pc-table").addEventListener("click", (event) => {
        const header = (event.target as HTMLElement).closest("th[data-sort]");
        if (!header || !state.statsTable) {
            return;
        }
        const key = header.getAttribute("data-sort") as PcSortKey;
        state.sortDescending = state.sortKey === key ? !state.sortDescending : true;
        state.sortKey = key;
        renderBrowser();
    });

    el<HTMLButtonElement>("bench-run").addEventListener("click", () => void runBench());
    renderBrowser();
}

document.addEventListener("DOMContentLoaded", wire);
