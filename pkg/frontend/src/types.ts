// Wire contracts for the EXnet inference service.

export interface PredictResponse {
  probability: number;
  answer: boolean;
  k: number;
  truncated: boolean;
  model_id: string;
}

export interface ClassifyResponse {
  /** Independent per-label probabilities; these do not sum to one. */
  scores: Record<string, number>;
  /** Highest-probability label, ties broken by lexicographic order. */
  top: string;
}

export interface HealthResponse {
  status: string;
  model_id?: string;
  config_preset?: string;
  uptime_s?: number;
}

/** Error envelope the service uses for every non-2xx response. */
export interface ErrorResponse {
  error: {
    field: string;
    message: string;
  };
}
