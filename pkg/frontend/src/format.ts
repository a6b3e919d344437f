// Display formatting. All numeric panels round here and nowhere else, so a
// test comparing rendered output to API numbers has a single rounding rule.

export function fmtCurrent(mA: number): string {
  return `${mA.toFixed(3)} mA`;
}

export function fmtValue(value: number | null): string {
  if (value === null) {
    return "-";
  }
  if (Number.isInteger(value)) {
    return String(value);
  }
  return value.toFixed(3);
}

/** Simulated clock as h:mm:ss. */
export function fmtSimTime(tS: number | null): string {
  if (tS === null) {
    return "-";
  }
  const total = Math.floor(tS);
  const h = Math.floor(total / 3600);
  const m = Math.floor((total % 3600) / 60);
  const s = total % 60;
  const mm = String(m).padStart(2, "0");
  const ss = String(s).padStart(2, "0");
  return `${h}:${mm}:${ss}`;
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
