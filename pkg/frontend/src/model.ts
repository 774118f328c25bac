/**
 * Console state
 *
 * A pure reducer over gateway events: the connection layer feeds frames
 * in, the renderer reads the model out, and nothing here touches a
 * socket or a terminal, so every behaviour is unit-testable.
 */

import {
  type ConsoleCommand,
  type GatewayEvent,
  SILENCE_WORD,
} from './protocol.js';

export const MAX_LOG_ENTRIES = 50;

export interface LogEntry {
  t: number | null;
  line: string;
}

export interface ConsoleModel {
  connected: boolean;
  /** Operator clicks only send frames while true; false = observe only. */
  wizardMode: boolean;
  stateName: string | null;
  /** Clickable answers: the active grammar's sentences minus the silence word. */
  buttons: string[];
  robotSpeaking: boolean;
  lastRobotLine: string | null;
  lastDisplay: string | null;
  lastHeard: string | null;
  lastError: string | null;
  /** Newest-last, capped at MAX_LOG_ENTRIES. */
  log: LogEntry[];
}

export function initialModel(): ConsoleModel {
  return {
    connected: false,
    wizardMode: true,
    stateName: null,
    buttons: [],
    robotSpeaking: false,
    lastRobotLine: null,
    lastDisplay: null,
    lastHeard: null,
    lastError: null,
    log: [],
  };
}

function pushLog(model: ConsoleModel, t: number | null, line: string): ConsoleModel {
  const log = [...model.log, { t, line }];
  if (log.length > MAX_LOG_ENTRIES) {
    log.splice(0, log.length - MAX_LOG_ENTRIES);
  }
  return { ...model, log };
}

export function applyEvent(model: ConsoleModel, event: GatewayEvent): ConsoleModel {
  switch (event.type) {
    case 'hello':
      return pushLog(model, event.t, 'connected to gateway');
    case 'state': {
      const next: ConsoleModel = {
        ...model,
        stateName: event.name,
        buttons: event.sentences.filter((s) => s !== SILENCE_WORD),
        lastError: null,
      };
      return pushLog(next, event.t, `state -> ${event.name}`);
    }
    case 'asr': {
      const next = { ...model, lastHeard: event.text };
      return pushLog(next, event.t, `heard: ${event.text}`);
    }
    case 'robot_speech': {
      if (event.text !== undefined) {
        const next = { ...model, lastRobotLine: event.text };
        return pushLog(next, event.t, `robot: ${event.text}`);
      }
      return { ...model, robotSpeaking: event.status === 'start' };
    }
    case 'display': {
      const next = { ...model, lastDisplay: event.text };
      return pushLog(next, event.t, `screen: ${event.text}`);
    }
    case 'error': {
      const detail = event.detail ? ` (${event.detail})` : '';
      const next = { ...model, lastError: `${event.error}${detail}` };
      return pushLog(next, null, `rejected: ${event.error}${detail}`);
    }
  }
}

export function setConnected(model: ConsoleModel, connected: boolean): ConsoleModel {
  if (connected === model.connected) {
    return model;
  }
  const next = { ...model, connected };
  return connected ? next : pushLog(next, null, 'connection lost');
}

export function toggleWizardMode(model: ConsoleModel): ConsoleModel {
  return { ...model, wizardMode: !model.wizardMode };
}

/**
 * Resolve an answer-button click to the command it should send.
 *
 * Returns null — meaning "send nothing" — when wizard mode is off, the
 * console is disconnected, or the index points at no button; a click
 * therefore never produces more than one frame.
 */
export function clickButton(model: ConsoleModel, index: number): ConsoleCommand | null {
  if (!model.wizardMode || !model.connected) {
    return null;
  }
  const text = model.buttons[index];
  if (text === undefined) {
    return null;
  }
  return { type: 'wizard_utterance', text };
}

/** The "child said nothing" click, legal exactly when answers are expected. */
export function clickSilence(model: ConsoleModel): ConsoleCommand | null {
  if (!model.wizardMode || !model.connected || model.buttons.length === 0) {
    return null;
  }
  return { type: 'wizard_utterance', text: SILENCE_WORD };
}
