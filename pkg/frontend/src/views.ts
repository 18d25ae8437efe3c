// Pure rendering helpers: state in, HTML strings out. Everything shown is a
// value the server sent; the only client-side computation is layout.

import type {
  BadgeState,
  DeviceRow,
  LoopRow,
  PlanRow,
  RuleDiagnostics,
  RuleRow,
  Snapshot,
  StreamEvent,
} from "./types.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(value: number | boolean | string): string {
  if (typeof value === "number") {
    return Number.isInteger(value) ? String(value) : value.toFixed(2);
  }
  return String(value);
}

/** SVG polyline points for a sparkline, scaled into width x height. */
export function sparklinePoints(values: number[], width = 120, height = 28): string {
  if (values.length === 0) return "";
  if (values.length === 1) return `0,${height / 2} ${width},${height / 2}`;
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = width / (values.length - 1);
  return values
    .map((v, i) => {
      const x = i * step;
      const y = height - ((v - lo) / span) * height;
      return `${Math.round(x * 100) / 100},${Math.round(y * 100) / 100}`;
    })
    .join(" ");
}

export function renderDeviceTile(
  device: DeviceRow,
  series: Map<string, number[]>,
  badgeFor: (deviceId: number) => { id: string; state: BadgeState; reason?: string } | null,
): string {
  const values = Object.entries(device.values)
    .map(([prop, value]) => {
      const key = `${device.id}/${prop}`;
      const points = sparklinePoints(series.get(key) ?? []);
      const spark = points
        ? `<svg class="spark" viewBox="0 0 120 28" width="120" height="28">` +
          `<polyline points="${points}" fill="none" stroke="currentColor"/></svg>`
        : "";
      return `<div class="prop"><span class="prop-name">${escapeHtml(prop)}</span>` +
        `<span class="prop-value">${escapeHtml(fmt(value))}</span>${spark}</div>`;
    })
    .join("");
  const badge = badgeFor(device.id);
  const badgeHtml = badge
    ? `<span class="badge badge-${badge.state}" data-command="${badge.id}">` +
      `${badge.state}${badge.reason ? `: ${escapeHtml(badge.reason)}` : ""}</span>`
    : "";
  return `<div class="tile status-${device.status}" data-device="${device.id}">
  <div class="tile-head"><strong>${escapeHtml(device.name)}</strong>
    <span class="status-dot"></span> <span class="status">${device.status}</span></div>
  <div class="tile-sub">#${device.id} · ${escapeHtml(device.region)} · seen @${device.lastSeen}</div>
  ${values}
  <div class="tile-actions">
    <button data-act="on" data-device="${device.id}">on</button>
    <button data-act="off" data-device="${device.id}">off</button>
    ${badgeHtml}
  </div>
</div>`;
}

export function renderLoopPanel(loop: LoopRow, lastPlan: PlanRow | null): string {
  const c = loop.counters;
  const chain = lastPlan
    ? `<div class="chain">symptoms <code>${lastPlan.cause.map(escapeHtml).join(", ")}</code>
       → plan <code>${escapeHtml(lastPlan.id)}</code>
       → ${lastPlan.actions.map((a) => `<code>${escapeHtml(a.kind)}</code>`).join(" ")}</div>`
    : `<div class="chain chain-empty">no plan yet</div>`;
  return `<div class="loop" data-loop="${escapeHtml(loop.id)}">
  <div><strong>${escapeHtml(loop.id)}</strong> · ${escapeHtml(loop.mode)}</div>
  <div class="counters">M ${c.monitor} · A ${c.analyse} · P ${c.plan} · E ${c.execute}</div>
  ${chain}
</div>`;
}

export function renderRules(rules: RuleRow[]): string {
  if (rules.length === 0) return "<p>no rules installed</p>";
  return (
    "<ul class='rules'>" +
    rules
      .map(
        (r) =>
          `<li class="${r.enabled ? "" : "disabled"}"><code>${escapeHtml(r.id)}</code>` +
          ` <span class="engine">@${escapeHtml(r.engine)}</span>` +
          ` <span class="rule-text">${escapeHtml(r.text)}</span></li>`,
      )
      .join("") +
    "</ul>"
  );
}

export function renderEventRow(event: StreamEvent): string {
  return `<li><span class="tick">t${event.tick}</span> ` +
    `<span class="schema">${escapeHtml(event.schema)}</span> ` +
    `<span class="topic">${escapeHtml(event.topic)}</span></li>`;
}

export function renderRunBar(snapshot: Snapshot): string {
  const run = snapshot.run;
  return `scenario <strong>${escapeHtml(run.scenario)}</strong> · mode ${escapeHtml(run.mode)}` +
    ` · seed ${run.seed} · tick <strong>${run.tick}</strong>`;
}

/** The caret line for a rule diagnostic: returns "" when there is no
 * position. Column is 1-based, matching the server's rule parser. */
export function caretLine(diagnostics: RuleDiagnostics): string {
  if (!diagnostics.position) return "";
  return " ".repeat(Math.max(0, diagnostics.position.col - 1)) + "^";
}

export function renderDiagnostics(text: string, diagnostics: RuleDiagnostics): string {
  const caret = caretLine(diagnostics);
  const sourceLine = text.split("\n")[(diagnostics.position?.line ?? 1) - 1] ?? text;
  const expected = diagnostics.expected?.length
    ? `<div class="expected">expected: ${diagnostics.expected.map(escapeHtml).join(" | ")}</div>`
    : "";
  return `<pre class="diag"><code>${escapeHtml(sourceLine)}\n${caret}</code></pre>
<div class="diag-message">${escapeHtml(diagnostics.code)}: ${escapeHtml(diagnostics.message)}</div>
${expected}`;
}
