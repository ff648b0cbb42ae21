import { AnnotationSession } from './session';

const KEY_STEP = 40;        // raw units per keypress tick
const GAMEPAD_AXIS = 1;     // vertical stick axis, up = positive affect

/**
 * Binds keyboard arrows and a gamepad's vertical axis to the session control.
 * Keyboard nudges accumulate; an attached gamepad drives the control
 * absolutely from the stick position each poll.
 */
export class ControlInput {
  private keysDown = new Set<string>();

  constructor(private session: AnnotationSession) {}

  attach(target: Window): void {
    target.addEventListener('keydown', this.onKey);
    target.addEventListener('keyup', this.onKeyUp);
  }

  detach(target: Window): void {
    target.removeEventListener('keydown', this.onKey);
    target.removeEventListener('keyup', this.onKeyUp);
  }

  private onKey = (event: KeyboardEvent): void => {
    if (event.key === 'ArrowUp' || event.key === 'ArrowDown') {
      event.preventDefault();
      this.keysDown.add(event.key);
      this.session.moveControl(event.key === 'ArrowUp' ? KEY_STEP : -KEY_STEP);
    }
  };

  private onKeyUp = (event: KeyboardEvent): void => {
    this.keysDown.delete(event.key);
  };

  /** Called every animation tick; held keys keep nudging, gamepad overrides. */
  poll(): void {
    if (this.keysDown.has('ArrowUp')) this.session.moveControl(KEY_STEP / 4);
    if (this.keysDown.has('ArrowDown')) this.session.moveControl(-KEY_STEP / 4);
    const pads = typeof navigator !== 'undefined' && navigator.getGamepads
      ? navigator.getGamepads()
      : [];
    for (const pad of pads) {
      if (!pad) continue;
      const axis = pad.axes[GAMEPAD_AXIS];
      if (axis !== undefined && Math.abs(axis) > 0.05) {
        // stick up is negative in the Gamepad API
        this.session.setControl(-axis * 1000);
      }
      break;
    }
  }
}
