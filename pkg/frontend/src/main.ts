/** Browser entry point: resolve the API base URL and mount the app. */

import { GendsClient } from "./api.js";
import { createApp } from "./app.js";

function resolveBaseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  if (fromQuery) {
    try {
      window.localStorage.setItem("gends-api", fromQuery);
    } catch {
      // private mode; just use it for this page load
    }
    return fromQuery;
  }
  try {
    const stored = window.localStorage.getItem("gends-api");
    if (stored) return stored;
  } catch {
    // ignore storage errors
  }
  const host = window.location.hostname || "127.0.0.1";
  return `http://${host}:8000`;
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
createApp(root, new GendsClient(resolveBaseUrl()), { pollMs: 3000 });
