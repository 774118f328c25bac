/**
 * Gateway wire protocol
 *
 * One JSON object per newline-terminated line in both directions.
 * Shapes mirror docs/gateway-protocol.md (schema in
 * docs/gateway-protocol.schema.json); parsing here is strict so a
 * protocol drift fails loudly in the console instead of rendering
 * garbage.
 */

export const SILENCE_WORD = '!SIL';
export const DEFAULT_GATEWAY_PORT = 7602;

// ===== Server -> console =====

export interface HelloEvent {
  type: 'hello';
  t: number;
}

export interface AsrEvent {
  type: 'asr';
  t: number;
  text: string;
}

export interface StateEvent {
  type: 'state';
  t: number;
  name: string;
  /** Every sentence the state's grammar accepts; empty when no speech is expected. */
  sentences: string[];
}

/** Carries either `text` (the robot's line) or `status` ("start" | "end"). */
export interface RobotSpeechEvent {
  type: 'robot_speech';
  t: number;
  text?: string;
  status?: 'start' | 'end';
}

export interface DisplayEvent {
  type: 'display';
  t: number;
  text: string;
}

export interface ErrorEvent {
  type: 'error';
  error: string;
  detail?: string;
}

export type GatewayEvent =
  | HelloEvent
  | AsrEvent
  | StateEvent
  | RobotSpeechEvent
  | DisplayEvent
  | ErrorEvent;

// ===== Console -> server =====

export type ConsoleCommand =
  | { type: 'wizard_utterance'; text: string }
  | { type: 'abort' };

export class ProtocolError extends Error {}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === 'object' && value !== null && !Array.isArray(value);
}

function requireString(obj: Record<string, unknown>, field: string): string {
  const value = obj[field];
  if (typeof value !== 'string') {
    throw new ProtocolError(`frame field '${field}' must be a string`);
  }
  return value;
}

function requireNumber(obj: Record<string, unknown>, field: string): number {
  const value = obj[field];
  if (typeof value !== 'number' || !Number.isFinite(value)) {
    throw new ProtocolError(`frame field '${field}' must be a finite number`);
  }
  return value;
}

/** Parse one line from the gateway. Throws ProtocolError on anything off-spec. */
export function parseEventLine(line: string): GatewayEvent {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError(`not JSON: ${line.slice(0, 80)}`);
  }
  if (!isRecord(raw)) {
    throw new ProtocolError('frame is not a JSON object');
  }
  const type = raw['type'];
  switch (type) {
    case 'hello':
      return { type, t: requireNumber(raw, 't') };
    case 'asr':
      return { type, t: requireNumber(raw, 't'), text: requireString(raw, 'text') };
    case 'state': {
      const sentences = raw['sentences'];
      if (!Array.isArray(sentences) || sentences.some((s) => typeof s !== 'string')) {
        throw new ProtocolError("state frame 'sentences' must be a string array");
      }
      return {
        type,
        t: requireNumber(raw, 't'),
        name: requireString(raw, 'name'),
        sentences: sentences as string[],
      };
    }
    case 'robot_speech': {
      const t = requireNumber(raw, 't');
      if (typeof raw['text'] === 'string') {
        return { type, t, text: raw['text'] };
      }
      const status = raw['status'];
      if (status === 'start' || status === 'end') {
        return { type, t, status };
      }
      throw new ProtocolError("robot_speech frame needs 'text' or a start/end 'status'");
    }
    case 'display':
      return { type, t: requireNumber(raw, 't'), text: requireString(raw, 'text') };
    case 'error': {
      const event: ErrorEvent = { type, error: requireString(raw, 'error') };
      if (typeof raw['detail'] === 'string') {
        event.detail = raw['detail'];
      }
      return event;
    }
    default:
      throw new ProtocolError(`unknown event type: ${JSON.stringify(type)}`);
  }
}

/** Encode a command as exactly one newline-terminated line. */
export function encodeCommand(command: ConsoleCommand): string {
  return JSON.stringify(command) + '\n';
}
