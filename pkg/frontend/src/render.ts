/**
 * Screen rendering: model in, one string out. No terminal I/O here.
 */

import type { ConsoleModel } from './model.js';

const LOG_LINES_SHOWN = 12;

function fmtTime(t: number | null): string {
  return t === null ? '      ' : `${t.toFixed(1).padStart(6)}s`;
}

export function renderModel(model: ConsoleModel): string {
  const lines: string[] = [];
  lines.push('phrasebot operator console');
  lines.push('='.repeat(60));

  if (!model.connected) {
    lines.push('');
    lines.push('  !!! DISCONNECTED — retrying; commands are disabled !!!');
    lines.push('');
  }

  lines.push(`state: ${model.stateName ?? '(waiting for first state)'}`);
  lines.push(
    `mode:  ${model.wizardMode ? 'WIZARD (clicks answer for the child)' : 'observe (clicks disabled)'}`,
  );
  if (model.robotSpeaking) {
    lines.push('robot: [speaking...]');
  } else if (model.lastRobotLine) {
    lines.push(`robot: ${model.lastRobotLine}`);
  }
  if (model.lastDisplay) {
    lines.push(`screen: ${model.lastDisplay}`);
  }
  if (model.lastHeard) {
    lines.push(`heard:  ${model.lastHeard}`);
  }
  if (model.lastError) {
    lines.push(`REJECTED: ${model.lastError}`);
  }

  lines.push('');
  if (model.buttons.length > 0) {
    lines.push('answers:');
    model.buttons.forEach((text, i) => lines.push(`  [${i + 1}] ${text}`));
    lines.push('  [0] (silence — say nothing)');
  } else {
    lines.push('answers: none expected in this state');
  }

  lines.push('');
  lines.push(`recent events (last ${Math.min(model.log.length, LOG_LINES_SHOWN)} of ${model.log.length} kept):`);
  for (const entry of model.log.slice(-LOG_LINES_SHOWN)) {
    lines.push(`  ${fmtTime(entry.t)}  ${entry.line}`);
  }

  lines.push('');
  lines.push('keys: 1-9 answer | 0 silence | w wizard mode | a abort | q quit');
  return lines.join('\n');
}
