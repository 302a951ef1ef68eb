/** Wire types mirrored from the engine's session service. */

export interface ParsedReply {
  think: string | null;
  answer: string | null;
  diff_list: string[] | null;
  exam_list: string[] | null;
  tool_list: string[] | null;
  boxed: string | null;
  format_errors: number;
}

export interface TurnRecord {
  index: number;
  stage: string;
  prompt: string;
  raw_response: string;
  parsed: ParsedReply;
  backend: string;
  timestamp: string;
  rois: string[];
}

export interface ObservationItem {
  tool: string;
  text: string;
  rois: string[];
}

export interface ExamResultItem {
  source: string;
  text: string;
}

export interface ScreeningInfo {
  rois: string[];
  finding: string | null;
}

export interface SessionState {
  status?: string;
  session_id: string;
  slide_id: string;
  case_info: string;
  stage: string;
  stage_history: string[];
  differential: string[];
  pending_exams: string[];
  pending_tools: string[];
  observations: ObservationItem[];
  exam_results: ExamResultItem[];
  screening: ScreeningInfo | null;
  rounds: number;
  final_diagnosis: string | null;
  inconclusive: boolean;
  abort_cause: string | null;
  turns: TurnRecord[];
}

export interface CreateSessionRequest {
  case_info: string;
  slide_id: string;
  mode?: "interactive" | "oracle";
  seed?: number;
  max_rounds?: number;
  auto_advance?: boolean;
}

export interface StatusEvent {
  status: string;
  pending_exams: string[];
  differential: string[];
}

export interface FinalEvent {
  final_diagnosis: string | null;
  inconclusive: boolean;
  stage_history: string[];
}

export type SessionEvent =
  | { event: "turn"; data: TurnRecord }
  | { event: "status"; data: StatusEvent }
  | { event: "final"; data: FinalEvent };
