import { readFileSync } from "node:fs";

/** Load a recorded API payload from tests/fixtures/. */
export function fixture<T>(name: string): T {
    const url = new URL(`../../tests/fixtures/${name}`, import.meta.url);
    return JSON.parse(readFileSync(url, "utf-8")) as T;
}

export function fixtureText(name: string): string {
    const url = new URL(`../../tests/fixtures/${name}`, import.meta.url);
    return readFileSync(url, "utf-8");
}
