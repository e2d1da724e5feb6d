#include <math.h>
#include <stdio.h>
#include "weekcast.h"

int main(void) {
    double y[156];
    for (int i = 0; i < 156; i++)
        y[i] = 1000.0 * (1.0 + 0.2 * cos(2.0 * 3.141592653589793 * i / 52.0)) * (1.0 + 0.01 * ((i * 37) % 11 - 5));

    WcSeries *s = NULL;
    if (wc_series_new("tpv", "2017-01-02", y, 156, &s) != WC_STATUS_OK) {
        fprintf(stderr, "series: %s\n", wc_last_error());
        return 1;
    }
    size_t order[7] = {1, 0, 0, 0, 1, 0, 52};
    WcModel *m = NULL;
    if (wc_sarimax_fit(s, order, 0, true, 1, &m) != WC_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", wc_last_error());
        return 1;
    }
    WcForecast *f = NULL;
    if (wc_forecast(m, s, 4, &f) != WC_STATUS_OK) {
        fprintf(stderr, "forecast: %s\n", wc_last_error());
        return 1;
    }
    for (size_t h = 1; h <= wc_forecast_horizon(f); h++) {
        double p50, p90;
        wc_forecast_quantile(f, h, 0.5, &p50);
        wc_forecast_quantile(f, h, 0.9, &p90);
        printf("%zu %.2f %.2f\n", h, p50, p90);
    }
    WcStatus bad = wc_forecast_quantile(f, 99, 0.5, &(double){0});
    printf("status %d: %s\n", (int)bad, wc_last_error());

    wc_forecast_free(f);
    wc_model_free(m);
    wc_series_free(s);
    return 0;
}
