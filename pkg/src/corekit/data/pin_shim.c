/* Thread-pinning preload shim.
 *
 * Loaded into a target process via LD_PRELOAD.  The constructor binds
 * the main thread to the first core of COREKIT_PIN_LIST; an interposed
 * pthread_create pins each subsequently created thread to the next
 * list entry, skipping creation events whose bit is set in
 * COREKIT_PIN_SKIP.  The affinity change runs inside the new thread
 * before the user start routine, so no code runs on the wrong core.
 */
#define _GNU_SOURCE
#include <dlfcn.h>
#include <errno.h>
#include <pthread.h>
#include <sched.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define MAX_CORES 4096

static int core_list[MAX_CORES];
static int list_len = 0;
static uint64_t skip_mask = 0;
static pthread_mutex_t state_lock = PTHREAD_MUTEX_INITIALIZER;
static unsigned long creation_counter = 0;
/* Slot 0 belongs to the main thread, pinned by the constructor. */
static unsigned long cursor = 1;
static int warned_wrap = 0;

static int (*real_pthread_create)(pthread_t *, const pthread_attr_t *,
                                  void *(*)(void *), void *);

static void pin_self(int core)
{
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(core, &set);
    if (sched_setaffinity(0, sizeof(set), &set) != 0)
        fprintf(stderr, "corekit-pin: cannot bind thread to core %d\n", core);
}

__attribute__((constructor)) static void pin_init(void)
{
    const char *list = getenv("COREKIT_PIN_LIST");
    const char *skip = getenv("COREKIT_PIN_SKIP");
    char *copy, *tok;

    if (!list || !*list)
        return;
    copy = strdup(list);
    if (!copy)
        return;
    for (tok = strtok(copy, ","); tok && list_len < MAX_CORES;
         tok = strtok(NULL, ","))
        core_list[list_len++] = atoi(tok);
    free(copy);
    if (skip)
        skip_mask = strtoull(skip, NULL, 0);
    if (list_len > 0)
        pin_self(core_list[0]);
}

struct trampoline_arg {
    void *(*fn)(void *);
    void *arg;
    int core;
};

static void *trampoline(void *raw)
{
    struct trampoline_arg a = *(struct trampoline_arg *)raw;
    free(raw);
    pin_self(a.core);
    return a.fn(a.arg);
}

int pthread_create(pthread_t *thread, const pthread_attr_t *attr,
                   void *(*fn)(void *), void *arg)
{
    unsigned long event;
    int skipped, core = -1;
    struct trampoline_arg *ta;

    if (!real_pthread_create) {
        real_pthread_create = dlsym(RTLD_NEXT, "pthread_create");
        if (!real_pthread_create)
            return EAGAIN;
    }
    if (list_len == 0)
        return real_pthread_create(thread, attr, fn, arg);

    pthread_mutex_lock(&state_lock);
    event = creation_counter++;
    /* Events past bit 63 are never skipped: the mask is zero-extended. */
    skipped = event < 64 && ((skip_mask >> event) & 1);
    if (!skipped) {
        if (cursor >= (unsigned long)list_len && !warned_wrap) {
            fprintf(stderr, "corekit-pin: core list exhausted, wrapping\n");
            warned_wrap = 1;
        }
        core = core_list[cursor % (unsigned long)list_len];
        cursor++;
    }
    pthread_mutex_unlock(&state_lock);

    if (core < 0)
        return real_pthread_create(thread, attr, fn, arg);
    ta = malloc(sizeof(*ta));
    if (!ta)
        return real_pthread_create(thread, attr, fn, arg);
    ta->fn = fn;
    ta->arg = arg;
    ta->core = core;
    return real_pthread_create(thread, attr, trampoline, ta);
}
