/** Browser wiring: login, queue refresh, pair detail, decisions.
 * All registry access goes through RegistryClient; the only mutating
 * calls are POST /token and POST /review-queue/{id}/decision. */

import { ApiError, AuthExpiredError, RegistryClient, ReviewItem } from "./api.js";
import {
  buildPairRows,
  buildQueueView,
  checkDecision,
  describeDecisionError,
} from "./queue.js";
import { renderLoginPrompt, renderPair, renderQueue } from "./render.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("registry") ?? "http://127.0.0.1:8000";
const client = new RegistryClient(baseUrl);

const root = document.getElementById("app")!;
const toast = document.getElementById("toast")!;

let items: ReviewItem[] = [];
let selected: ReviewItem | null = null;

function showToast(message: string): void {
  toast.textContent = message;
  toast.classList.add("visible");
  setTimeout(() => toast.classList.remove("visible"), 4000);
}

function showLogin(message: string): void {
  selected = null;
  root.innerHTML = renderLoginPrompt(message);
  const form = document.getElementById("login-form") as HTMLFormElement;
  form.addEventListener("submit", async (e) => {
    e.preventDefault();
    const data = new FormData(form);
    try {
      await client.login(String(data.get("client_id")), String(data.get("client_secret")));
      await refreshQueue();
    } catch (err) {
      if (err instanceof ApiError) showLogin("Sign-in failed; check the credentials.");
      else throw err;
    }
  });
}

async function withAuth<T>(fn: () => Promise<T>): Promise<T | undefined> {
  try {
    return await fn();
  } catch (err) {
    if (err instanceof AuthExpiredError) {
      client.logout();
      showLogin("Session expired; sign in again.");
      return undefined;
    }
    throw err;
  }
}

async function refreshQueue(): Promise<void> {
  await withAuth(async () => {
    items = await client.reviewQueue("PENDING");
    root.innerHTML = renderQueue(buildQueueView(items));
    for (const row of root.querySelectorAll<HTMLElement>(".queue-row")) {
      row.addEventListener("click", () => openPair(row.dataset.itemId!));
    }
  });
}

async function openPair(itemId: string): Promise<void> {
  const item = items.find((i) => i.id === itemId);
  if (!item) return;
  await withAuth(async () => {
    const [a, b] = await Promise.all([
      client.patient(item.result.pair[0]),
      client.patient(item.result.pair[1]),
    ]);
    selected = item;
    const anonymity =
      a.profile.anonymity_requested || b.profile.anonymity_requested;
    root.innerHTML = renderPair(item, buildPairRows(item, a, b), anonymity);
    for (const button of root.querySelectorAll<HTMLButtonElement>("button[data-decision]")) {
      button.addEventListener("click", () =>
        submitDecision(button.dataset.decision as "APPROVE" | "REJECT"),
      );
    }
  });
}

async function submitDecision(decision: "APPROVE" | "REJECT"): Promise<void> {
  if (!selected) return;
  const chosen = root.querySelector<HTMLInputElement>(
    "input[name=survivor]:checked",
  );
  const guard = checkDecision(selected, decision, chosen?.value ?? null);
  if (!guard.ok) {
    showToast(guard.reason);
    return;
  }
  await withAuth(async () => {
    try {
      await client.decide(selected!.id, decision, chosen?.value);
      showToast(decision === "APPROVE" ? "Merge applied." : "Pair rejected.");
      await refreshQueue();
    } catch (err) {
      if (!(err instanceof ApiError)) throw err;
      const outcome = describeDecisionError(err);
      showToast(outcome.message);
      if (outcome.refreshQueue) await refreshQueue();
    }
  });
}

showLogin("Sign in with a STEWARD-scope client.");
