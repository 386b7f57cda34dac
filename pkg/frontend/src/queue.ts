/** Pure view-model logic for the review queue and the side-by-side pair
 * view. No DOM access here so it is unit-testable in node. Scores and
 * agreement flags are passed through from the API, never recomputed. */

import type { ApiError, PatientView, ReviewItem } from "./api.js";

export interface QueueView {
  items: ReviewItem[];
  pendingBadge: number;
  empty: boolean;
}

/** Queue rows sorted by total score descending, ties by item id. */
export function buildQueueView(items: ReviewItem[]): QueueView {
  const sorted = [...items].sort(
    (a, b) => b.result.total - a.result.total || a.id.localeCompare(b.id),
  );
  const pending = sorted.filter((i) => i.state === "PENDING").length;
  return { items: sorted, pendingBadge: pending, empty: sorted.length === 0 };
}

export interface FieldRow {
  label: string;
  left: string;
  right: string;
  differs: boolean;
  agreed: boolean | null; // per-comparator badge; null = no evidence
  weight: number | null;
}

const FIELD_LABELS: Record<string, string> = {
  NIC: "NIC",
  FAMILY_NAME: "Family name",
  GIVEN_NAME: "Given names",
  DOB: "Date of birth",
  SEX: "Sex",
  ADDRESS: "Address",
};

function fieldValue(patient: PatientView, field: string): string {
  switch (field) {
    case "NIC":
      return patient.identifiers.find((i) => i.kind === "NIC")?.value ?? "";
    case "FAMILY_NAME":
      return patient.profile.family_name;
    case "GIVEN_NAME":
      return patient.profile.given_names.join(" ");
    case "DOB":
      return patient.profile.date_of_birth;
    case "SEX":
      return patient.profile.sex;
    case "ADDRESS":
      return patient.profile.address_lines.join(", ");
    default:
      return "";
  }
}

/** Field-by-field rows for the two patient cards; differing fields are
 * flagged and each comparator's agreement badge is attached. */
export function buildPairRows(
  item: ReviewItem,
  left: PatientView,
  right: PatientView,
): FieldRow[] {
  return item.result.per_field.map((fc) => {
    const l = fieldValue(left, fc.field);
    const r = fieldValue(right, fc.field);
    return {
      label: FIELD_LABELS[fc.field] ?? fc.field,
      left: l,
      right: r,
      differs: l !== r,
      agreed: fc.agreed,
      weight: fc.weight,
    };
  });
}

export type DecisionGuard =
  | { ok: true }
  | { ok: false; reason: string };

/** Client-side guard: approving requires a survivor from the pair. */
export function checkDecision(
  item: ReviewItem,
  decision: "APPROVE" | "REJECT",
  survivorChoice: string | null,
): DecisionGuard {
  if (decision === "REJECT") return { ok: true };
  if (!survivorChoice) {
    return { ok: false, reason: "Select a surviving record before approving." };
  }
  if (!item.result.pair.includes(survivorChoice)) {
    return { ok: false, reason: "Survivor must be one of the pair." };
  }
  return { ok: true };
}

/** Map an API failure onto the message the steward should see. */
export function describeDecisionError(err: ApiError): {
  message: string;
  refreshQueue: boolean;
  itemStays: boolean;
} {
  switch (err.code) {
    case "ITEM_NOT_PENDING":
      return {
        message: "Already decided elsewhere — refreshing the queue.",
        refreshQueue: true,
        itemStays: false,
      };
    case "IDENTIFIER_CONFLICT":
      return {
        message: `Identifier conflict: ${err.message}. Resolve the conflicting identifiers before merging; the item stays in the queue.`,
        refreshQueue: false,
        itemStays: true,
      };
    case "BAD_SURVIVOR_CHOICE":
      return {
        message: "Survivor must be one of the pair.",
        refreshQueue: false,
        itemStays: true,
      };
    default:
      return { message: err.message, refreshQueue: false, itemStays: true };
  }
}
