/** Wire types mirroring the control API's JSON bodies. */

export type Role = "student" | "instructor" | "admin";

export interface Identity {
  subject: string;
  tenant: string;
  role: Role;
}

export interface SessionView {
  id: number;
  owner: string;
  tenant: string;
  state: string;
  url: string | null;
  hostname: string | null;
  web_port: number | null;
  ssh_port: number | null;
  aux_port: number | null;
  image: string;
  created_at: string;
  updated_at: string;
}

export interface ReportSample {
  event_index: number;
  response_ms: number | null;
}

export interface LatencyReport {
  samples: ReportSample[];
  cdf: [number, number][];
  percentiles: Record<string, number>;
  skipped_count: number;
}

export interface SessionCreateRequest {
  image?: string;
  cpu_cores?: number;
  memory_bytes?: number;
  stream_ssh?: boolean;
  aux_bridge?: boolean;
}
