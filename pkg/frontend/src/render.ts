/** HTML string rendering for the console views. Pure functions over the
 * view-models so they can be asserted in node without a DOM. */

import type { ReviewItem } from "./api.js";
import type { FieldRow, QueueView } from "./queue.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderQueue(view: QueueView): string {
  if (view.empty) {
    return `<p class="empty-state">No pending items.</p>`;
  }
  const rows = view.items
    .map(
      (item) => `<tr data-item-id="${escapeHtml(item.id)}" class="queue-row">
  <td>${escapeHtml(item.id)}</td>
  <td>${escapeHtml(item.result.pair[0])}</td>
  <td>${escapeHtml(item.result.pair[1])}</td>
  <td class="score">${item.result.total.toFixed(4)}</td>
  <td><span class="state state-${item.state.toLowerCase()}">${item.state}</span>${
    item.pre_approved ? ` <span class="badge pre">auto-match</span>` : ""
  }</td>
</tr>`,
    )
    .join("\n");
  return `<div class="queue">
<span class="badge pending-count">${view.pendingBadge}</span>
<table class="queue-table">
<thead><tr><th>Item</th><th>Record A</th><th>Record B</th><th>Score</th><th>State</th></tr></thead>
<tbody>
${rows}
</tbody>
</table>
</div>`;
}

export function renderPair(
  item: ReviewItem,
  rows: FieldRow[],
  anonymityBanner: boolean,
): string {
  const [a, b] = item.result.pair;
  const banner = anonymityBanner
    ? `<p class="banner anonymity">Anonymity requested on at least one record.</p>`
    : "";
  const body = rows
    .map(
      (row) => `<tr class="${row.differs ? "differs" : "same"}">
  <th>${escapeHtml(row.label)}</th>
  <td>${escapeHtml(row.left)}</td>
  <td>${escapeHtml(row.right)}</td>
  <td class="agree-badge">${
    row.agreed === null ? "&mdash;" : row.agreed ? "agree" : "disagree"
  }</td>
</tr>`,
    )
    .join("\n");
  return `<div class="pair" data-item-id="${escapeHtml(item.id)}">
${banner}
<h2>${escapeHtml(item.id)} &mdash; score ${item.result.total.toFixed(4)}</h2>
<table class="pair-table">
<thead><tr><th></th><th>${escapeHtml(a)}</th><th>${escapeHtml(b)}</th><th></th></tr></thead>
<tbody>
${body}
</tbody>
</table>
<fieldset class="survivor">
  <legend>Surviving record</legend>
  <label><input type="radio" name="survivor" value="${escapeHtml(a)}"> ${escapeHtml(a)}</label>
  <label><input type="radio" name="survivor" value="${escapeHtml(b)}"> ${escapeHtml(b)}</label>
</fieldset>
<button class="approve" data-decision="APPROVE">Approve merge</button>
<button class="reject" data-decision="REJECT">Reject</button>
</div>`;
}

export function renderLoginPrompt(message: string): string {
  return `<form class="login" id="login-form">
  <p class="login-message">${escapeHtml(message)}</p>
  <label>Client id <input name="client_id" autocomplete="username"></label>
  <label>Secret <input name="client_secret" type="password" autocomplete="current-password"></label>
  <button type="submit">Sign in</button>
</form>`;
}
